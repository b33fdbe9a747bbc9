//! Contraction constants, error bounds, the t* feasibility window, and the
//! Monte Carlo verifiers that check them against the Gaussian oracle.
//!
//! The reverse chain's deterministic part contracts distances by
//! `lambda_t = sqrt(1 - beta_t) (1 - abar_{t-1}) / (1 - abar_t)`, with noise
//! trace constant `C_t = d beta_t`. Chaining the per-step inequality yields
//! the cumulative bound `(|delta|^2 + 2d) exp(-t* beta_{t*} / 2) +
//! 2d t* beta_{t*}` and, for `t* beta_{t*}` inside the feasibility window,
//! the final estimate `E|x_bar_0 - x|^2 <= 2 (mu + 1) Delta`.
//!
//! `lambda_t` is exact for the oracle only in the `sigma -> 0` limit. The
//! verifiers therefore assert a per-step inequality only where the oracle's
//! exact contraction factor is within 0.1% of `lambda_t`; uncertified steps
//! are still recorded, but no claim is made for them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::diffusion::ScoreFunction;
use crate::oracle::{exact_contraction_factor, GaussianMixtureSpec, OracleScore};
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

/// Relative tolerance within which the oracle's exact contraction factor
/// must match `lambda_t` for a per-step inequality to be asserted.
pub const LAMBDA_CERTIFICATION_RTOL: f64 = 1e-3;

/// How `lambda_1` is treated. With `abar_0 = 1` the formula gives
/// `lambda_1 = 0`, which trivializes the product; `SkipFirst` starts the
/// product at `s = 2` so the Lemma-style diagnostic stays meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaConvention {
    Alpha0One,
    SkipFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBudget {
    pub norm: NormKind,
    pub epsilon: f64,
}

impl PerturbationBudget {
    pub fn new(norm: NormKind, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidRange("epsilon must be >= 0"));
        }
        Ok(PerturbationBudget { norm, epsilon })
    }
}

/// `lambda_t = sqrt(1 - beta_t) (1 - abar_{t-1}) / (1 - abar_t)`.
///
/// Under `Alpha0One`, `lambda_1 = 0` (since `abar_0 = 1`); under
/// `SkipFirst`, `t = 1` is excluded and requesting it is an error.
pub fn lambda_t(schedule: &DiffusionSchedule, t: usize, convention: LambdaConvention) -> Result<f64> {
    if t < 1 || t > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    if t == 1 && convention == LambdaConvention::SkipFirst {
        return Err(Error::InvalidRange(
            "lambda_1 is excluded under the skip-first convention",
        ));
    }
    let beta = schedule.beta(t)?;
    Ok(math::sqrt(1.0 - beta) * (1.0 - schedule.alpha_bar(t - 1)?) / (1.0 - schedule.alpha_bar(t)?))
}

/// `C_t = d beta_t`.
pub fn noise_trace_constant(schedule: &DiffusionSchedule, t: usize, d: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::InvalidRange("dimension must be >= 1"));
    }
    Ok(d as f64 * schedule.beta(t)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductBound {
    pub product: f64,
    pub exp_bound: f64,
    pub holds: bool,
}

/// `prod lambda_s^2` over the convention's index set versus
/// `exp(-t* beta_{t*} / 2)`.
pub fn lambda_product_bound(
    schedule: &DiffusionSchedule,
    t_star: usize,
    convention: LambdaConvention,
) -> Result<ProductBound> {
    if t_star < 1 || t_star > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t: t_star,
            max: schedule.steps(),
        });
    }
    let start = match convention {
        LambdaConvention::Alpha0One => 1,
        LambdaConvention::SkipFirst => 2,
    };
    let mut product = 1.0;
    for s in start..=t_star {
        let l = lambda_t(schedule, s, LambdaConvention::Alpha0One)?;
        product *= l * l;
    }
    if t_star < start {
        product = 1.0; // empty product
    }
    let exp_bound = math::exp(-(t_star as f64) * schedule.beta(t_star)? / 2.0);
    Ok(ProductBound {
        product,
        exp_bound,
        holds: product <= exp_bound,
    })
}

/// `(|delta|^2 + 2d) exp(-t* beta_{t*} / 2) + 2d t* beta_{t*}`.
pub fn cumulative_error_bound(
    schedule: &DiffusionSchedule,
    t_star: usize,
    delta_norm_sq: f64,
    d: usize,
) -> Result<f64> {
    if delta_norm_sq < 0.0 {
        return Err(Error::InvalidRange("delta_norm_sq must be >= 0"));
    }
    if d < 1 {
        return Err(Error::InvalidRange("dimension must be >= 1"));
    }
    let tb = t_star as f64 * schedule.beta(t_star)?;
    Ok((delta_norm_sq + 2.0 * d as f64) * math::exp(-tb / 2.0) + 2.0 * d as f64 * tb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TstarWindow {
    /// Lower bound on `t beta_t`, floored at 0.
    pub lower: f64,
    /// Upper bound on `t beta_t`.
    pub upper: f64,
    pub feasible: bool,
    /// Schedule timesteps whose `t beta_t` lies in `[lower, upper]`;
    /// contiguous because `t beta_t` is increasing.
    pub admissible_ts: Vec<usize>,
}

/// Theorem-style feasibility window:
/// `2 log((2|delta|^2 + 4d) / (mu Delta)) <= t beta_t <= mu Delta / (4d)`.
pub fn tstar_window(
    delta_norm_sq: f64,
    d: usize,
    mu: f64,
    delta_cap: f64,
    schedule: &DiffusionSchedule,
) -> Result<TstarWindow> {
    if !(mu > 0.0) || !(delta_cap > 0.0) {
        return Err(Error::InvalidRange("mu and Delta must be > 0"));
    }
    if d < 1 {
        return Err(Error::InvalidRange("dimension must be >= 1"));
    }
    if delta_norm_sq < 0.0 {
        return Err(Error::InvalidRange("delta_norm_sq must be >= 0"));
    }
    let df = d as f64;
    let raw_lower = 2.0 * math::ln((2.0 * delta_norm_sq + 4.0 * df) / (mu * delta_cap));
    let lower = raw_lower.max(0.0);
    let upper = mu * delta_cap / (4.0 * df);
    let feasible = lower <= upper;
    let mut admissible_ts = Vec::new();
    if feasible {
        for t in 1..=schedule.steps() {
            let tb = t as f64 * schedule.beta(t)?;
            if tb > upper {
                break;
            }
            if tb >= lower {
                admissible_ts.push(t);
            }
        }
    }
    Ok(TstarWindow {
        lower,
        upper,
        feasible,
        admissible_ts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Fresh epsilon for each trajectory of the pair at every step, as in the
    /// proof's paired-trajectory argument.
    Independent,
    /// Both trajectories share the same epsilon at every step.
    Shared,
}

/// One per-step contraction check.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCheck {
    pub t: usize,
    /// Empirical `E|x_{t-1} - x_bar_{t-1}|^2` and its standard error.
    pub lhs_mean: f64,
    pub lhs_se: f64,
    /// `lambda_t^2 * (empirical E|x_t - x_bar_t|^2) + 2 C_t`.
    pub rhs: f64,
    /// Whether `lambda_t` is certified for the oracle at this step.
    pub certified: bool,
    /// `lhs_mean <= rhs + 2 lhs_se`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub t_star: usize,
    pub convention: LambdaConvention,
    pub n: usize,
    pub seed: u64,
    pub mode: NoiseMode,
    /// `lambda_t` for `t = 1..=t_star` (Alpha0One values; `lambda_1 = 0`).
    pub lambdas: Vec<f64>,
    /// `C_t = d beta_t` for `t = 1..=t_star`.
    pub c_values: Vec<f64>,
    /// Skip-first product diagnostic and its exponential bound.
    pub product: f64,
    pub exp_bound: f64,
    /// `(|delta|^2 + 2d) exp(-t* beta/2) + 2d t* beta`.
    pub cumulative_bound: f64,
    /// Empirical `E|x_bar_{t*} - x_{t*}|^2` (and SE) right after the forward step.
    pub initial_sq_mean: f64,
    pub initial_sq_se: f64,
    /// Empirical `E|x_bar_0 - x_0|^2` (and SE) after full denoising.
    pub final_sq_mean: f64,
    pub final_sq_se: f64,
    pub steps: Vec<StepCheck>,
    /// All certified per-step inequalities plus the cumulative bound hold.
    pub holds: bool,
}

fn small_sigma_gate(
    spec: &GaussianMixtureSpec,
    schedule: &DiffusionSchedule,
    t_star: usize,
) -> Result<()> {
    let limit = 1e-3 * (1.0 - schedule.alpha_bar(t_star)?);
    if spec.max_variance() > limit {
        return Err(Error::Precondition(
            "component variance too large: lambda_t is not certified for this oracle; \
             need sigma^2 <= 1e-3 * (1 - alpha_bar_{t*})",
        ));
    }
    Ok(())
}

fn mean_se(sum: f64, sumsq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sumsq / nf - mean * mean).max(0.0);
    (mean, math::sqrt(var / nf))
}

fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Simulate `n` paired reverse trajectories (clean `x` and perturbed
/// `x + delta`) with the oracle score and noise at every step, recording the
/// per-step squared distances and checking the contraction inequalities.
pub fn verify_contraction_mc(
    spec: &GaussianMixtureSpec,
    schedule: &DiffusionSchedule,
    t_star: usize,
    delta: &Tensor,
    n: usize,
    seed: u64,
    mode: NoiseMode,
) -> Result<ContractionReport> {
    if t_star < 1 || t_star > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t: t_star,
            max: schedule.steps(),
        });
    }
    if n < 1000 {
        return Err(Error::Precondition("need N >= 1000 trajectories"));
    }
    if delta.len() != spec.dim {
        return Err(Error::DimensionMismatch);
    }
    small_sigma_gate(spec, schedule, t_star)?;

    let d = spec.dim;
    let score = OracleScore::new(spec.clone(), schedule.clone());
    let ab = schedule.alpha_bar(t_star)?;
    let signal = math::sqrt(ab) as f32;
    let noise = math::sqrt(1.0 - ab) as f32;

    // dist_sum[t] accumulates |x_t - x_bar_t|^2 over trajectories.
    let mut dist_sum = alloc::vec![0.0f64; t_star + 1];
    let mut dist_sumsq = alloc::vec![0.0f64; t_star + 1];

    for i in 0..n {
        let mut rng = RngStream::new(seed, i as u64);
        let x0 = spec.sample(&mut rng);
        let eps0 = rng.normal_vec_f32(d);
        let eps0_bar = match mode {
            NoiseMode::Independent => rng.normal_vec_f32(d),
            NoiseMode::Shared => eps0.clone(),
        };
        // Rows: 0 = clean trajectory, 1 = perturbed trajectory.
        let mut pair = Tensor::zeros(alloc::vec![2, d]);
        for j in 0..d {
            pair.values_mut()[j] = signal * x0[j] + noise * eps0[j];
            pair.values_mut()[d + j] =
                signal * (x0[j] + delta.values()[j]) + noise * eps0_bar[j];
        }
        let sq = dist_sq(pair.row(0), pair.row(1));
        dist_sum[t_star] += sq;
        dist_sumsq[t_star] += sq * sq;

        for t in (1..=t_star).rev() {
            let beta = schedule.beta(t)?;
            let inv = (1.0 / math::sqrt(1.0 - beta)) as f32;
            let beta32 = beta as f32;
            let nscale = math::sqrt(beta) as f32;
            let s = score.evaluate(&pair, t)?;
            for j in 0..2 * d {
                pair.values_mut()[j] = (pair.values()[j] + beta32 * s.values()[j]) * inv;
            }
            for j in 0..d {
                let e = rng.normal_f32();
                let e_bar = match mode {
                    NoiseMode::Independent => rng.normal_f32(),
                    NoiseMode::Shared => e,
                };
                pair.values_mut()[j] += nscale * e;
                pair.values_mut()[d + j] += nscale * e_bar;
            }
            let sq = dist_sq(pair.row(0), pair.row(1));
            dist_sum[t - 1] += sq;
            dist_sumsq[t - 1] += sq * sq;
        }
    }

    let sigma2 = spec.max_variance();
    let mut lambdas = Vec::with_capacity(t_star);
    let mut c_values = Vec::with_capacity(t_star);
    let mut steps = Vec::with_capacity(t_star);
    let mut all_certified_hold = true;
    for t in 1..=t_star {
        let l = lambda_t(schedule, t, LambdaConvention::Alpha0One)?;
        let c = noise_trace_constant(schedule, t, d)?;
        lambdas.push(l);
        c_values.push(c);
        let f = exact_contraction_factor(sigma2, schedule, t)?;
        let certified = l > 0.0 && (f - l).abs() <= LAMBDA_CERTIFICATION_RTOL * l;
        let (lhs_mean, lhs_se) = mean_se(dist_sum[t - 1], dist_sumsq[t - 1], n);
        let (rhs_mean, _) = mean_se(dist_sum[t], dist_sumsq[t], n);
        let rhs = l * l * rhs_mean + 2.0 * c;
        let holds = lhs_mean <= rhs + 2.0 * lhs_se;
        if certified && !holds {
            all_certified_hold = false;
        }
        steps.push(StepCheck {
            t,
            lhs_mean,
            lhs_se,
            rhs,
            certified,
            holds,
        });
    }

    let delta_norm_sq: f64 = delta.values().iter().map(|&v| (v as f64) * (v as f64)).sum();
    let cumulative_bound = cumulative_error_bound(schedule, t_star, delta_norm_sq, d)?;
    let product_diag = lambda_product_bound(schedule, t_star, LambdaConvention::SkipFirst)?;
    let (initial_sq_mean, initial_sq_se) = mean_se(dist_sum[t_star], dist_sumsq[t_star], n);
    let (final_sq_mean, final_sq_se) = mean_se(dist_sum[0], dist_sumsq[0], n);
    let cumulative_holds = final_sq_mean <= cumulative_bound + 2.0 * final_sq_se;

    Ok(ContractionReport {
        t_star,
        convention: LambdaConvention::Alpha0One,
        n,
        seed,
        mode,
        lambdas,
        c_values,
        product: product_diag.product,
        exp_bound: product_diag.exp_bound,
        cumulative_bound,
        initial_sq_mean,
        initial_sq_se,
        final_sq_mean,
        final_sq_se,
        steps,
        holds: all_certified_hold && cumulative_holds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub n: usize,
    pub seed: u64,
    pub mu: f64,
    /// Pilot timestep used to take the first Delta measurement.
    pub pilot_t_star: usize,
    pub delta_hat_pilot: f64,
    /// Re-measured clean denoising error at the chosen t*.
    pub delta_hat: f64,
    pub delta_hat_se: f64,
    pub window: TstarWindow,
    pub chosen_t_star: Option<usize>,
    pub feasible: bool,
    /// Empirical `E|x_bar_0 - x|^2` of the perturbed run.
    pub err_mean: f64,
    pub err_se: f64,
    /// `2 (mu + 1) delta_hat`.
    pub bound: f64,
    pub holds: bool,
}

fn denoise_error_sq(
    spec: &GaussianMixtureSpec,
    schedule: &DiffusionSchedule,
    score: &OracleScore,
    t_star: usize,
    delta: Option<&Tensor>,
    n: usize,
    seed: u64,
    stream_base: u64,
) -> Result<(f64, f64)> {
    let d = spec.dim;
    let ab = schedule.alpha_bar(t_star)?;
    let signal = math::sqrt(ab) as f32;
    let noise = math::sqrt(1.0 - ab) as f32;
    let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
    for i in 0..n {
        let mut rng = RngStream::new(seed, stream_base + i as u64);
        let x = spec.sample(&mut rng);
        let mut xt = Tensor::from_vec(
            (0..d)
                .map(|j| {
                    let base = x[j] + delta.map_or(0.0, |dl| dl.values()[j]);
                    signal * base + noise * rng.normal_f32()
                })
                .collect(),
        );
        // Noise at every reverse step, matching the proof's trajectory form.
        xt = crate::diffusion::denoise_from(&xt, t_star, schedule, score, &mut rng, true)?;
        let sq = dist_sq(xt.values(), &x);
        sum += sq;
        sumsq += sq * sq;
    }
    Ok(mean_se(sum, sumsq, n))
}

/// Measure `Delta_hat`, derive the feasibility window, pick an admissible
/// `t*`, and check the final estimate against `2 (mu + 1) Delta_hat`.
///
/// `Delta` depends on the denoising horizon, so it is measured twice: once at
/// a pilot `t*` (a tenth of the schedule) to seed the window, and again at
/// the chosen `t*` for the final verdict.
pub fn theorem_check_mc(
    spec: &GaussianMixtureSpec,
    schedule: &DiffusionSchedule,
    delta: &Tensor,
    mu: f64,
    n: usize,
    seed: u64,
) -> Result<TheoremReport> {
    if n < 1000 {
        return Err(Error::Precondition("need N >= 1000 trajectories"));
    }
    if delta.len() != spec.dim {
        return Err(Error::DimensionMismatch);
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidRange("mu must be > 0"));
    }
    let d = spec.dim;
    let score = OracleScore::new(spec.clone(), schedule.clone());
    let pilot_t_star = (schedule.steps() / 10).max(1);
    small_sigma_gate(spec, schedule, pilot_t_star)?;

    let (delta_hat_pilot, _) =
        denoise_error_sq(spec, schedule, &score, pilot_t_star, None, n, seed, 0)?;
    let delta_norm_sq: f64 = delta.values().iter().map(|&v| (v as f64) * (v as f64)).sum();
    let window = tstar_window(delta_norm_sq, d, mu, delta_hat_pilot, schedule)?;

    let chosen = window.admissible_ts.last().copied();
    let Some(t_star) = chosen else {
        return Ok(TheoremReport {
            n,
            seed,
            mu,
            pilot_t_star,
            delta_hat_pilot,
            delta_hat: delta_hat_pilot,
            delta_hat_se: 0.0,
            window,
            chosen_t_star: None,
            feasible: false,
            err_mean: 0.0,
            err_se: 0.0,
            bound: 0.0,
            holds: false,
        });
    };
    small_sigma_gate(spec, schedule, t_star)?;

    let offset = n as u64;
    let (delta_hat, delta_hat_se) =
        denoise_error_sq(spec, schedule, &score, t_star, None, n, seed, offset)?;
    let (err_mean, err_se) = denoise_error_sq(
        spec,
        schedule,
        &score,
        t_star,
        Some(delta),
        n,
        seed,
        2 * offset,
    )?;
    let bound = 2.0 * (mu + 1.0) * delta_hat;
    let holds = err_mean <= bound + 2.0 * err_se;
    Ok(TheoremReport {
        n,
        seed,
        mu,
        pilot_t_star,
        delta_hat_pilot,
        delta_hat,
        delta_hat_se,
        window,
        chosen_t_star: Some(t_star),
        feasible: true,
        err_mean,
        err_se,
        bound,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schedule() -> DiffusionSchedule {
        DiffusionSchedule::from_betas(alloc::vec![0.1, 0.2]).unwrap()
    }

    #[test]
    fn lambda_toy_by_hand() {
        let s = toy_schedule();
        let l = lambda_t(&s, 2, LambdaConvention::Alpha0One).unwrap();
        // sqrt(0.8) * 0.1 / 0.28
        assert!((l - 0.31944).abs() < 1e-4, "lambda_2 = {l}");
    }

    #[test]
    fn lambda_1_conventions() {
        let s = toy_schedule();
        assert_eq!(lambda_t(&s, 1, LambdaConvention::Alpha0One).unwrap(), 0.0);
        assert!(lambda_t(&s, 1, LambdaConvention::SkipFirst).is_err());
    }

    #[test]
    fn lambda_in_unit_interval() {
        let s = DiffusionSchedule::default_linear();
        for t in 2..=s.steps() {
            let l = lambda_t(&s, t, LambdaConvention::Alpha0One).unwrap();
            assert!(l > 0.0 && l < 1.0, "lambda_{t} = {l}");
        }
    }

    #[test]
    fn trace_constant() {
        let s = toy_schedule();
        assert!((noise_trace_constant(&s, 2, 3).unwrap() - 0.6).abs() < 1e-15);
        let lin = DiffusionSchedule::default_linear();
        let c = noise_trace_constant(&lin, 100, 4).unwrap();
        assert!((c - 4.0 * lin.beta(100).unwrap()).abs() < 1e-15);
        assert!((c - 0.008288).abs() < 1e-5, "C = {c}");
    }

    #[test]
    fn product_bound_linear_t100() {
        let s = DiffusionSchedule::default_linear();
        let pb = lambda_product_bound(&s, 100, LambdaConvention::SkipFirst).unwrap();
        assert!(pb.holds);
        assert!((pb.product - 8.5e-7).abs() < 5e-8, "product {}", pb.product);
        assert!((pb.exp_bound - 0.9016).abs() < 5e-4, "bound {}", pb.exp_bound);
    }

    #[test]
    fn product_bound_alpha0_one_is_zero() {
        let s = DiffusionSchedule::default_linear();
        let pb = lambda_product_bound(&s, 100, LambdaConvention::Alpha0One).unwrap();
        assert_eq!(pb.product, 0.0);
        assert!(pb.holds);
    }

    #[test]
    fn telescoped_product_identity() {
        // Independent closed form: (abar_{t*} / abar_1) * (beta_1 / (1 - abar_{t*}))^2.
        for s in [
            DiffusionSchedule::default_linear(),
            DiffusionSchedule::default_cosine(),
        ] {
            for t_star in [10, 100, 500, 900] {
                let direct = lambda_product_bound(&s, t_star, LambdaConvention::SkipFirst)
                    .unwrap()
                    .product;
                let b1 = s.beta(1).unwrap();
                let closed = (s.alpha_bar(t_star).unwrap() / s.alpha_bar(1).unwrap())
                    * (b1 / (1.0 - s.alpha_bar(t_star).unwrap())).powi(2);
                assert!(
                    (direct - closed).abs() <= 1e-10 * closed,
                    "t*={t_star}: {direct} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn cumulative_bound_values() {
        let s = DiffusionSchedule::default_linear();
        let b = cumulative_error_bound(&s, 100, 0.25, 4).unwrap();
        assert!((b - 9.10).abs() < 0.01, "bound {b}");
        // Monotone in delta_norm_sq.
        let b2 = cumulative_error_bound(&s, 100, 0.5, 4).unwrap();
        assert!(b2 > b);
    }

    #[test]
    fn cumulative_bound_small_noise_limit() {
        // t* beta -> 0: bound -> (0 + 2d) * 1 + 0 = 2d.
        let s = DiffusionSchedule::default_linear();
        let b = cumulative_error_bound(&s, 1, 0.0, 4).unwrap();
        assert!((b - 8.0).abs() < 0.01, "bound {b}");
    }

    #[test]
    fn window_feasible_example() {
        let s = DiffusionSchedule::default_linear();
        let w = tstar_window(0.0, 16, 8.0, 8.0, &s).unwrap();
        assert!(w.feasible);
        assert!((w.lower - 0.0).abs() < 1e-12);
        assert!((w.upper - 1.0).abs() < 1e-12);
        assert!(!w.admissible_ts.is_empty());
        // Contiguity.
        for pair in w.admissible_ts.windows(2) {
            assert_eq!(pair[1], pair[0] + 1);
        }
    }

    #[test]
    fn window_infeasible_examples() {
        let s = DiffusionSchedule::default_linear();
        let w = tstar_window(32.0, 16, 8.0, 8.0, &s).unwrap();
        assert!(!w.feasible);
        assert!((w.lower - 2.0 * math::ln(2.0)).abs() < 1e-12);
        assert!((w.upper - 1.0).abs() < 1e-12);

        let w2 = tstar_window(2.0, 4, 2.0, 1.0, &s).unwrap();
        assert!(!w2.feasible);
        assert!((w2.lower - 2.0 * math::ln(10.0)).abs() < 1e-12);
        assert!((w2.upper - 0.125).abs() < 1e-12);
    }

    #[test]
    fn window_lower_monotone_in_delta() {
        let s = DiffusionSchedule::default_linear();
        let mut prev = -1.0;
        for dn in [0.0, 1.0, 4.0, 16.0, 64.0] {
            let w = tstar_window(dn, 8, 4.0, 2.0, &s).unwrap();
            assert!(w.lower >= prev);
            assert!((w.upper - 4.0 * 2.0 / 32.0).abs() < 1e-12);
            prev = w.lower;
        }
    }

    #[test]
    fn shared_noise_zero_delta_is_exactly_zero() {
        let spec = GaussianMixtureSpec::single(alloc::vec![0.5, -0.2], 1e-6).unwrap();
        let s = DiffusionSchedule::default_linear();
        let delta = Tensor::from_vec(alloc::vec![0.0, 0.0]);
        let r = verify_contraction_mc(&spec, &s, 40, &delta, 1000, 11, NoiseMode::Shared).unwrap();
        assert_eq!(r.initial_sq_mean, 0.0);
        assert_eq!(r.final_sq_mean, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn sigma_gate_rejects_wide_components() {
        let spec = GaussianMixtureSpec::single(alloc::vec![0.0], 0.5).unwrap();
        let s = DiffusionSchedule::default_linear();
        let delta = Tensor::from_vec(alloc::vec![0.1]);
        assert!(matches!(
            verify_contraction_mc(&spec, &s, 100, &delta, 1000, 0, NoiseMode::Independent),
            Err(Error::Precondition(_))
        ));
    }
}
