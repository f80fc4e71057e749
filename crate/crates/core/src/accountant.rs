//! Moments accountant for Gaussian and subsampled-Gaussian releases.
//!
//! All noise levels are expressed as a dimensionless multiplier: the noise
//! standard deviation divided by the L2 sensitivity of the released statistic.

use crate::error::{domain, numeric, Result, VipsError};

/// Largest moment order on the default grid.
pub const DEFAULT_MAX_ORDER: u32 = 64;

/// Lower and upper ends of the multiplier bracket searched by calibration.
pub const CALIBRATION_BRACKET: (f64, f64) = (0.3, 64.0);

const QUAD_INITIAL_INTERVALS: usize = 512;
const QUAD_MAX_INTERVALS: usize = 1 << 22;
const QUAD_LOG_TOL: f64 = 1e-10;
const BISECTION_REL_TOL: f64 = 1e-7;

/// Noise multiplier and Poisson sampling rate of one release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismSpec {
    noise_multiplier: f64,
    sampling_rate: f64,
}

impl MechanismSpec {
    pub fn new(noise_multiplier: f64, sampling_rate: f64) -> Result<Self> {
        if !(noise_multiplier > 0.0 && noise_multiplier.is_finite()) {
            return domain(format!("noise multiplier must be positive, got {noise_multiplier}"));
        }
        if !(0.0..=1.0).contains(&sampling_rate) {
            return domain(format!("sampling rate must lie in [0, 1], got {sampling_rate}"));
        }
        Ok(Self { noise_multiplier, sampling_rate })
    }

    pub fn noise_multiplier(&self) -> f64 {
        self.noise_multiplier
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }
}

/// Strictly increasing list of moment orders, all at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentOrders(Vec<u32>);

impl MomentOrders {
    pub fn new(orders: Vec<u32>) -> Result<Self> {
        if orders.is_empty() {
            return domain("moment order grid is empty");
        }
        if orders[0] < 1 {
            return domain("moment orders must be at least 1");
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return domain("moment orders must be strictly increasing");
        }
        Ok(Self(orders))
    }

    /// The grid `1..=max_order`.
    pub fn up_to(max_order: u32) -> Result<Self> {
        Self::new((1..=max_order).collect())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for MomentOrders {
    fn default() -> Self {
        Self((1..=DEFAULT_MAX_ORDER).collect())
    }
}

/// Log moments α(λ) sampled on a grid of orders.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMomentCurve {
    orders: MomentOrders,
    alphas: Vec<f64>,
}

impl LogMomentCurve {
    pub fn new(orders: MomentOrders, alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() != orders.len() {
            return domain("log moment values and orders differ in length");
        }
        if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0) || a.is_infinite()) {
            return domain(format!("log moments must be finite and non-negative, got {a}"));
        }
        Ok(Self { orders, alphas })
    }

    pub fn zeros(orders: &MomentOrders) -> Self {
        Self { orders: orders.clone(), alphas: vec![0.0; orders.len()] }
    }

    /// Curve of a single full-data Gaussian release.
    pub fn gaussian(noise_multiplier: f64, orders: &MomentOrders) -> Result<Self> {
        let alphas = orders
            .as_slice()
            .iter()
            .map(|&l| gaussian_log_moment(l, noise_multiplier))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { orders: orders.clone(), alphas })
    }

    /// Curve of a single subsampled Gaussian release.
    pub fn subsampled_gaussian(spec: MechanismSpec, orders: &MomentOrders) -> Result<Self> {
        let alphas = orders
            .as_slice()
            .iter()
            .map(|&l| subsampled_gaussian_log_moment(l, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { orders: orders.clone(), alphas })
    }

    pub fn orders(&self) -> &MomentOrders {
        &self.orders
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Pointwise sum with another curve on the same grid.
    pub fn add_assign(&mut self, other: &LogMomentCurve) -> Result<()> {
        if self.orders != other.orders {
            return domain("cannot compose curves on different order grids");
        }
        for (a, b) in self.alphas.iter_mut().zip(&other.alphas) {
            *a += b;
        }
        Ok(())
    }

    /// Curve multiplied pointwise by a release count.
    pub fn scaled(&self, count: u64) -> Self {
        let k = count as f64;
        Self { orders: self.orders.clone(), alphas: self.alphas.iter().map(|a| a * k).collect() }
    }

    pub fn epsilon_for_delta(&self, delta: f64) -> Result<f64> {
        epsilon_for_delta(self, delta)
    }

    pub fn delta_for_epsilon(&self, epsilon: f64) -> Result<f64> {
        delta_for_epsilon(self, epsilon)
    }
}

/// An (ε, δ) guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
}

impl PrivacyParams {
    /// A target budget: ε > 0 and δ in (0, 1).
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return domain(format!("epsilon must be positive, got {epsilon}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return domain(format!("delta must lie in (0, 1), got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }

    /// A composed guarantee, where δ = 0 is allowed.
    fn composed(epsilon: f64, delta: f64) -> Self {
        Self { epsilon, delta }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Running composition of every release made by a training loop.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    composed: LogMomentCurve,
    releases: u64,
    last: Option<(MechanismSpec, LogMomentCurve)>,
}

impl PrivacyLedger {
    pub fn new(orders: &MomentOrders) -> Self {
        Self { composed: LogMomentCurve::zeros(orders), releases: 0, last: None }
    }

    /// Adds one subsampled-Gaussian release to the ledger.
    pub fn record(&mut self, spec: MechanismSpec) -> Result<()> {
        let curve = match &self.last {
            Some((s, c)) if *s == spec => c.clone(),
            _ => {
                let c = LogMomentCurve::subsampled_gaussian(spec, self.composed.orders())?;
                self.last = Some((spec, c.clone()));
                c
            }
        };
        self.composed.add_assign(&curve)?;
        self.releases += 1;
        Ok(())
    }

    pub fn composed(&self) -> &LogMomentCurve {
        &self.composed
    }

    pub fn releases(&self) -> u64 {
        self.releases
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        self.composed.epsilon_for_delta(delta)
    }
}

/// Closed-form log moment λ(λ+1)/(2z²) of the Gaussian mechanism.
pub fn gaussian_log_moment(lambda: u32, noise_multiplier: f64) -> Result<f64> {
    if !(noise_multiplier > 0.0) {
        return domain(format!("noise multiplier must be positive, got {noise_multiplier}"));
    }
    let l = lambda as f64;
    Ok(l * (l + 1.0) / (2.0 * noise_multiplier * noise_multiplier))
}

/// Log moment of the Poisson-subsampled Gaussian mechanism by quadrature.
pub fn subsampled_gaussian_log_moment(lambda: u32, spec: MechanismSpec) -> Result<f64> {
    if lambda < 1 {
        return domain("moment order must be at least 1");
    }
    let q = spec.sampling_rate;
    if q == 0.0 {
        return Ok(0.0);
    }
    let z = spec.noise_multiplier;
    let l = lambda as f64;
    let half_width = (l + 1.0) + 12.0 * z + 6.0;
    let log_e1 = log_tilted_expectation(-l, q, z, half_width)?;
    let log_e2 = log_tilted_expectation(l + 1.0, q, z, half_width)?;
    Ok(log_e1.max(log_e2).max(0.0))
}

/// log E_{x∼N(0,z²)}[exp(c·r(x))] with r the log likelihood ratio of the mixture to N(0,z²).
fn log_tilted_expectation(c: f64, q: f64, z: f64, half_width: f64) -> Result<f64> {
    let inv_two_var = 1.0 / (2.0 * z * z);
    let log_norm = -(z * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let log_keep = (1.0 - q).ln();
    let log_q = q.ln();
    let log_integrand = |x: f64| {
        let shifted = log_q + (2.0 * x - 1.0) * inv_two_var;
        let r = if q == 1.0 { shifted } else { log_add_exp(log_keep, shifted) };
        log_norm - x * x * inv_two_var + c * r
    };

    let mut intervals = QUAD_INITIAL_INTERVALS;
    let mut prev = log_simpson(&log_integrand, -half_width, half_width, intervals);
    loop {
        intervals *= 2;
        if intervals > QUAD_MAX_INTERVALS {
            return numeric(format!(
                "log-moment quadrature did not converge (c={c}, q={q}, z={z})"
            ));
        }
        let cur = log_simpson(&log_integrand, -half_width, half_width, intervals);
        if !cur.is_finite() {
            return numeric(format!("log-moment quadrature produced {cur}"));
        }
        if (cur - prev).abs() < QUAD_LOG_TOL {
            return Ok(cur);
        }
        prev = cur;
    }
}

/// Composite Simpson rule applied to exp(f), returned in log space.
fn log_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let terms: Vec<f64> = (0..=intervals)
        .map(|i| {
            let w: f64 = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            f(a + h * i as f64) + w.ln()
        })
        .collect();
    log_sum_exp(&terms) + (h / 3.0).ln()
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Smallest ε over the grid such that α(λ) − λε ≤ ln δ.
pub fn epsilon_for_delta(curve: &LogMomentCurve, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let log_delta = delta.ln();
    Ok(curve
        .orders
        .as_slice()
        .iter()
        .zip(&curve.alphas)
        .map(|(&l, &a)| (a - log_delta) / l as f64)
        .fold(f64::INFINITY, f64::min))
}

/// Smallest δ over the grid at a fixed ε, clamped to 1.
pub fn delta_for_epsilon(curve: &LogMomentCurve, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    let log_delta = curve
        .orders
        .as_slice()
        .iter()
        .zip(&curve.alphas)
        .map(|(&l, &a)| a - l as f64 * epsilon)
        .fold(f64::INFINITY, f64::min);
    Ok(log_delta.exp().min(1.0))
}

/// Advanced composition of `steps` releases each (ε′, δ′)-private.
pub fn strong_composition(
    eps_step: f64,
    delta_step: f64,
    steps: u64,
    delta_slack: f64,
) -> Result<PrivacyParams> {
    if !(eps_step > 0.0) || !(delta_step >= 0.0) || steps == 0 {
        return domain("strong composition needs ε′ > 0, δ′ ≥ 0 and at least one step");
    }
    if !(delta_slack > 0.0 && delta_slack < 1.0) {
        return domain(format!("delta slack must lie in (0, 1), got {delta_slack}"));
    }
    let j = steps as f64;
    let epsilon = j * eps_step * eps_step.exp_m1() + (2.0 * j * (1.0 / delta_slack).ln()).sqrt() * eps_step;
    Ok(PrivacyParams::composed(epsilon, delta_slack + j * delta_step))
}

/// Basic composition: budgets add up.
pub fn linear_composition(eps_step: f64, delta_step: f64, steps: u64) -> Result<PrivacyParams> {
    if !(eps_step > 0.0) || !(delta_step >= 0.0) || steps == 0 {
        return domain("linear composition needs ε′ > 0, δ′ ≥ 0 and at least one step");
    }
    let j = steps as f64;
    Ok(PrivacyParams::composed(j * eps_step, j * delta_step))
}

/// σ = √(2 ln(1.25/δ))·Δ/ε, valid for ε ≤ 1.
pub fn classic_gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return domain(format!("classic calibration needs ε in (0, 1], got {epsilon}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(sensitivity > 0.0) {
        return domain(format!("sensitivity must be positive, got {sensitivity}"));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon)
}

/// Per-release (ε′, δ′) of a subsampled Gaussian release read off the classic
/// calibration formula and amplified by sampling.
///
/// The base mechanism runs at δ′/ν so that the amplified release has δ′.
pub fn classic_step_privacy(spec: MechanismSpec, delta_step: f64) -> Result<PrivacyParams> {
    let q = spec.sampling_rate;
    if q == 0.0 {
        return domain("a release that never samples has no per-step epsilon");
    }
    if !(delta_step > 0.0 && delta_step < q) {
        return domain(format!("per-step delta must lie in (0, ν), got {delta_step}"));
    }
    let base_delta = delta_step / q;
    let base_eps = (2.0 * (1.25 / base_delta).ln()).sqrt() / spec.noise_multiplier;
    Ok(PrivacyParams::composed((q * base_eps.exp_m1()).ln_1p(), delta_step))
}

/// Strong-composition baseline for `releases` identical releases with the total δ
/// split evenly between the slack and the per-step terms.
pub fn strong_composition_baseline(
    spec: MechanismSpec,
    releases: u64,
    delta_total: f64,
) -> Result<PrivacyParams> {
    let (slack, step) = baseline_delta_split(delta_total, releases)?;
    let per_step = classic_step_privacy(spec, step)?;
    strong_composition(per_step.epsilon, per_step.delta, releases, slack)
}

/// Linear-composition baseline with the same per-step budget as the strong baseline.
pub fn linear_composition_baseline(
    spec: MechanismSpec,
    releases: u64,
    delta_total: f64,
) -> Result<PrivacyParams> {
    let (_, step) = baseline_delta_split(delta_total, releases)?;
    let per_step = classic_step_privacy(spec, step)?;
    linear_composition(per_step.epsilon, per_step.delta, releases)
}

fn baseline_delta_split(delta_total: f64, releases: u64) -> Result<(f64, f64)> {
    if !(delta_total > 0.0 && delta_total < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta_total}"));
    }
    if releases == 0 {
        return domain("baseline needs at least one release");
    }
    Ok((delta_total / 2.0, delta_total / (2.0 * releases as f64)))
}

/// Moments-accountant ε after `releases` identical subsampled-Gaussian releases.
pub fn accountant_epsilon(
    spec: MechanismSpec,
    releases: u64,
    delta: f64,
    orders: &MomentOrders,
) -> Result<f64> {
    LogMomentCurve::subsampled_gaussian(spec, orders)?
        .scaled(releases)
        .epsilon_for_delta(delta)
}

/// Smallest multiplier in the calibration bracket whose composed ε meets the target.
pub fn calibrate_noise_multiplier(
    sampling_rate: f64,
    steps: u64,
    releases_per_step: u64,
    target: PrivacyParams,
    orders: &MomentOrders,
) -> Result<f64> {
    let releases = steps
        .checked_mul(releases_per_step)
        .filter(|r| *r > 0)
        .ok_or_else(|| VipsError::Domain("release count must be positive".into()))?;
    let eps_at = |z: f64| -> Result<f64> {
        accountant_epsilon(MechanismSpec::new(z, sampling_rate)?, releases, target.delta, orders)
    };
    bisect_multiplier(eps_at, target.epsilon, CALIBRATION_BRACKET)
}

/// Multiplier at which the strong-composition baseline spends the target ε.
pub fn calibrate_strong_composition(
    sampling_rate: f64,
    releases: u64,
    target: PrivacyParams,
) -> Result<f64> {
    let eps_at = |z: f64| -> Result<f64> {
        Ok(strong_composition_baseline(MechanismSpec::new(z, sampling_rate)?, releases, target.delta)?
            .epsilon)
    };
    bisect_multiplier(eps_at, target.epsilon, (CALIBRATION_BRACKET.0, 1e4))
}

fn bisect_multiplier(
    eps_at: impl Fn(f64) -> Result<f64>,
    target: f64,
    (mut lo, mut hi): (f64, f64),
) -> Result<f64> {
    if eps_at(hi)? > target {
        return Err(VipsError::Calibration(format!(
            "target epsilon {target} is not reachable with multiplier {hi}"
        )));
    }
    if eps_at(lo)? <= target {
        return Ok(lo);
    }
    while hi - lo > BISECTION_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
