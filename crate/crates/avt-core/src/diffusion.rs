//! Forward corruption, reverse denoising, and the sanitization loop.
//!
//! The forward process corrupts `x_0` to `x_t = sqrt(abar_t) x_0 +
//! sqrt(1 - abar_t) eps`, either in the single collapsed step or by iterating
//! the per-step Markov chain (test use). The reverse process applies
//! `x_{t-1} = (x_t + beta_t s(x_t, t)) / sqrt(1 - beta_t) + sqrt(beta_t) eps_t`
//! against a pluggable [`ScoreFunction`]. Sanitization chains the two:
//! forward to `t*`, then denoise back to 0.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

/// A score evaluator `s(x, t)`: the gradient of the log-density of the noisy
/// data distribution at step `t`.
///
/// Implementations must be side-effect free and tolerate concurrent
/// evaluation; output shape must equal input shape.
pub trait ScoreFunction: Sync {
    fn evaluate(&self, batch: &Tensor, t: usize) -> Result<Tensor>;
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for &S {
    fn evaluate(&self, batch: &Tensor, t: usize) -> Result<Tensor> {
        (**self).evaluate(batch, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// One collapsed Gaussian step to `t`.
    SingleStep,
    /// `t` applications of the per-step chain; distributionally equivalent.
    Iterated,
}

/// The noise consumed by a forward pass.
#[derive(Debug, Clone)]
pub enum NoiseRecord {
    /// `t = 0`: no noise drawn.
    None,
    /// Single-step mode: the one epsilon tensor.
    Single(Tensor),
    /// Iterated mode: epsilon for each step `1..=t`.
    Trace(Vec<Tensor>),
}

/// How sample values map between data space and model space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSpace {
    /// Data in [0, 1] mapped to [-1, 1] for diffusion, mapped back and
    /// clamped to [0, 1] on output.
    Image01,
    /// Toy vector data in [0, 1]: no mapping, output clamped to [0, 1].
    Unit01,
    /// No mapping, no clamping.
    Unbounded,
}

pub fn forward_diffuse(
    x0: &Tensor,
    schedule: &DiffusionSchedule,
    t: usize,
    rng: &mut RngStream,
    mode: ForwardMode,
) -> Result<(Tensor, NoiseRecord)> {
    if t > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    if !x0.all_finite() {
        return Err(Error::NonFinite("forward_diffuse input"));
    }
    if t == 0 {
        return Ok((x0.clone(), NoiseRecord::None));
    }
    match mode {
        ForwardMode::SingleStep => {
            let ab = schedule.alpha_bar(t)?;
            let signal = math::sqrt(ab) as f32;
            let noise = math::sqrt(1.0 - ab) as f32;
            let eps = Tensor::new(x0.dims().to_vec(), rng.normal_vec_f32(x0.len()))?;
            let mut out = x0.clone();
            for (o, e) in out.values_mut().iter_mut().zip(eps.values()) {
                *o = signal * *o + noise * *e;
            }
            Ok((out, NoiseRecord::Single(eps)))
        }
        ForwardMode::Iterated => {
            let mut x = x0.clone();
            let mut trace = Vec::with_capacity(t);
            for s in 1..=t {
                let beta = schedule.beta(s)?;
                let keep = math::sqrt(1.0 - beta) as f32;
                let add = math::sqrt(beta) as f32;
                let eps = Tensor::new(x.dims().to_vec(), rng.normal_vec_f32(x.len()))?;
                for (v, e) in x.values_mut().iter_mut().zip(eps.values()) {
                    *v = keep * *v + add * *e;
                }
                trace.push(eps);
            }
            Ok((x, NoiseRecord::Trace(trace)))
        }
    }
}

/// One reverse-process step from `x_t` to `x_{t-1}`.
///
/// When `t == 1` and `last_step_noise` is off, the epsilon term is omitted
/// (and no draw is consumed).
pub fn reverse_step(
    x_t: &Tensor,
    t: usize,
    schedule: &DiffusionSchedule,
    score: &dyn ScoreFunction,
    rng: &mut RngStream,
    last_step_noise: bool,
) -> Result<Tensor> {
    if t < 1 || t > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    let beta = schedule.beta(t)?;
    let s = score.evaluate(x_t, t)?;
    if !s.same_shape(x_t) {
        return Err(Error::ShapeMismatch);
    }
    if !s.all_finite() {
        return Err(Error::NonFinite("score output"));
    }
    let inv = (1.0 / math::sqrt(1.0 - beta)) as f32;
    let beta32 = beta as f32;
    let noise_scale = math::sqrt(beta) as f32;
    let mut out = x_t.clone();
    for (o, sv) in out.values_mut().iter_mut().zip(s.values()) {
        *o = (*o + beta32 * *sv) * inv;
    }
    if t > 1 || last_step_noise {
        for o in out.values_mut().iter_mut() {
            *o += noise_scale * rng.normal_f32();
        }
    }
    Ok(out)
}

/// Run the reverse process from `t_star` down to 1. `t_star = 0` returns the
/// input unchanged.
pub fn denoise_from(
    x_tstar: &Tensor,
    t_star: usize,
    schedule: &DiffusionSchedule,
    score: &dyn ScoreFunction,
    rng: &mut RngStream,
    last_step_noise: bool,
) -> Result<Tensor> {
    if t_star > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t: t_star,
            max: schedule.steps(),
        });
    }
    let mut x = x_tstar.clone();
    for t in (1..=t_star).rev() {
        x = reverse_step(&x, t, schedule, score, rng, last_step_noise)?;
    }
    Ok(x)
}

fn to_model_space(x: &mut Tensor, space: DataSpace) {
    if space == DataSpace::Image01 {
        x.map_in_place(|v| 2.0 * v - 1.0);
    }
}

fn to_data_space(x: &mut Tensor, space: DataSpace) {
    match space {
        DataSpace::Image01 => {
            x.map_in_place(|v| (v + 1.0) * 0.5);
            x.clamp_in_place(0.0, 1.0);
        }
        DataSpace::Unit01 => x.clamp_in_place(0.0, 1.0),
        DataSpace::Unbounded => {}
    }
}

/// Sanitize one sample: forward-diffuse to `t_star` and denoise back, using
/// the stream `(base_seed, sample_index)` so batch order and worker count
/// cannot change the result.
pub fn sanitize_sample(
    sample: &[f32],
    sample_index: u64,
    t_star: usize,
    schedule: &DiffusionSchedule,
    score: &dyn ScoreFunction,
    base_seed: u64,
    space: DataSpace,
) -> Result<Vec<f32>> {
    let mut x = Tensor::from_vec(sample.to_vec());
    to_model_space(&mut x, space);
    let mut rng = RngStream::new(base_seed, sample_index);
    let (noisy, _) = forward_diffuse(&x, schedule, t_star, &mut rng, ForwardMode::SingleStep)?;
    let mut denoised = denoise_from(&noisy, t_star, schedule, score, &mut rng, false)?;
    to_data_space(&mut denoised, space);
    Ok(denoised.into_values())
}

/// Sanitize an `n x d` batch sample by sample. Labels are not touched by
/// sanitization; callers carry them alongside.
pub fn sanitize_batch(
    batch: &Tensor,
    t_star: usize,
    schedule: &DiffusionSchedule,
    score: &dyn ScoreFunction,
    base_seed: u64,
    space: DataSpace,
) -> Result<Tensor> {
    let n = batch.rows();
    let d = batch.row_len();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = sanitize_sample(
            batch.row(i),
            i as u64,
            t_star,
            schedule,
            score,
            base_seed,
            space,
        )?;
        out.extend_from_slice(&row);
    }
    Tensor::new(batch.dims().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ZeroScore;
    impl ScoreFunction for ZeroScore {
        fn evaluate(&self, batch: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(Tensor::zeros(batch.dims().to_vec()))
        }
    }

    /// Score of N(0, 1) data under a variance-preserving chain: s(x, t) = -x.
    struct UnitGaussianScore;
    impl ScoreFunction for UnitGaussianScore {
        fn evaluate(&self, batch: &Tensor, _t: usize) -> Result<Tensor> {
            let mut out = batch.clone();
            out.map_in_place(|v| -v);
            Ok(out)
        }
    }

    #[test]
    fn forward_t0_is_identity() {
        let s = DiffusionSchedule::default_linear();
        let x = Tensor::from_vec(alloc::vec![0.3, -1.0, 2.5]);
        let mut rng = RngStream::new(0, 0);
        let (y, rec) = forward_diffuse(&x, &s, 0, &mut rng, ForwardMode::SingleStep).unwrap();
        assert_eq!(x, y);
        assert!(matches!(rec, NoiseRecord::None));
    }

    #[test]
    fn forward_zero_signal_reproducible() {
        let s = DiffusionSchedule::default_linear();
        let x = Tensor::zeros(alloc::vec![4]);
        let run = |seed| {
            let mut rng = RngStream::new(seed, 0);
            forward_diffuse(&x, &s, 50, &mut rng, ForwardMode::SingleStep)
                .unwrap()
                .0
        };
        assert_eq!(run(9).values(), run(9).values());
        let noise = math::sqrt(1.0 - s.alpha_bar(50).unwrap()) as f32;
        let mut rng = RngStream::new(9, 0);
        let eps = rng.normal_vec_f32(4);
        for (v, e) in run(9).values().iter().zip(&eps) {
            assert_eq!(*v, noise * e);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let s = DiffusionSchedule::default_linear();
        let mut rng = RngStream::new(0, 0);
        let x = Tensor::from_vec(alloc::vec![f32::NAN]);
        assert!(matches!(
            forward_diffuse(&x, &s, 1, &mut rng, ForwardMode::SingleStep),
            Err(Error::NonFinite(_))
        ));
        let ok = Tensor::from_vec(alloc::vec![0.0]);
        assert!(forward_diffuse(&ok, &s, 1001, &mut rng, ForwardMode::SingleStep).is_err());
    }

    #[test]
    fn reverse_zero_score_no_noise() {
        let s = DiffusionSchedule::default_linear();
        let x = Tensor::from_vec(alloc::vec![1.0, -2.0]);
        let mut rng = RngStream::new(0, 0);
        let y = reverse_step(&x, 1, &s, &ZeroScore, &mut rng, false).unwrap();
        let inv = (1.0 / math::sqrt(1.0 - s.beta(1).unwrap())) as f32;
        assert_eq!(y.values(), &[1.0 * inv, -2.0 * inv]);
    }

    #[test]
    fn reverse_deterministic() {
        let s = DiffusionSchedule::default_linear();
        let x = Tensor::from_vec(alloc::vec![0.5, 0.1, -0.3]);
        let run = || {
            let mut rng = RngStream::new(77, 3);
            reverse_step(&x, 10, &s, &UnitGaussianScore, &mut rng, true).unwrap()
        };
        assert_eq!(run().values(), run().values());
    }

    #[test]
    fn reverse_unit_gaussian_preserves_variance() {
        // With s(x) = -x and x_t ~ N(0,1): Var(x_{t-1}) = (1-beta) + beta = 1.
        let s = DiffusionSchedule::default_linear();
        let mut rng = RngStream::new(5, 0);
        let n = 20_000;
        let t = 400;
        let (mut sum, mut sum2) = (0.0f64, 0.0f64);
        for i in 0..n {
            let x = Tensor::from_vec(alloc::vec![rng.normal_f32()]);
            let mut step_rng = RngStream::new(5, 1000 + i);
            let y = reverse_step(&x, t, &s, &UnitGaussianScore, &mut step_rng, true).unwrap();
            let v = y.values()[0] as f64;
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn denoise_t0_identity() {
        let s = DiffusionSchedule::default_linear();
        let x = Tensor::from_vec(alloc::vec![0.1, 0.2]);
        let mut rng = RngStream::new(0, 0);
        let y = denoise_from(&x, 0, &s, &ZeroScore, &mut rng, false).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sanitize_t0_identity_in_range() {
        let s = DiffusionSchedule::default_linear();
        let batch =
            Tensor::new(alloc::vec![2, 3], alloc::vec![0.1, 0.5, 0.9, 0.0, 1.0, 0.3]).unwrap();
        let out = sanitize_batch(&batch, 0, &s, &ZeroScore, 42, DataSpace::Unit01).unwrap();
        assert_eq!(batch, out);
    }

    #[test]
    fn sanitize_empty_batch() {
        let s = DiffusionSchedule::default_linear();
        let batch = Tensor::new(alloc::vec![0, 3], alloc::vec![]).unwrap();
        let out = sanitize_batch(&batch, 10, &s, &ZeroScore, 42, DataSpace::Unit01).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.dims(), &[0, 3]);
    }

    #[test]
    fn sanitize_commutes_with_permutation() {
        let s = DiffusionSchedule::default_linear();
        let batch = Tensor::new(
            alloc::vec![3, 2],
            alloc::vec![0.1, 0.9, 0.4, 0.2, 0.8, 0.6],
        )
        .unwrap();
        let full = sanitize_batch(&batch, 20, &s, &UnitGaussianScore, 7, DataSpace::Unit01).unwrap();
        // Sample 2 sanitized alone under its own stream id must match.
        let solo =
            sanitize_sample(batch.row(2), 2, 20, &s, &UnitGaussianScore, 7, DataSpace::Unit01)
                .unwrap();
        assert_eq!(full.row(2), solo.as_slice());
    }
}
