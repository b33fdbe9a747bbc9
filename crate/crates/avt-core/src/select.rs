//! Choosing the sanitization horizon t*: schedule-to-schedule matching by
//! signal level, and PSNR-threshold selection against a sample batch.

use alloc::vec::Vec;

use crate::diffusion::{sanitize_sample, DataSpace, ScoreFunction};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

/// `10 log10(max^2 / MSE)`; returns `+inf` when the inputs are identical.
pub fn psnr(reference: &[f32], candidate: &[f32], max_value: f64) -> Result<f64> {
    if reference.len() != candidate.len() || reference.is_empty() {
        return Err(Error::ShapeMismatch);
    }
    if !(max_value > 0.0) {
        return Err(Error::InvalidRange("max_value must be > 0"));
    }
    let mut mse = 0.0f64;
    for (&r, &c) in reference.iter().zip(candidate) {
        if !r.is_finite() || !c.is_finite() {
            return Err(Error::NonFinite("psnr input"));
        }
        let d = r as f64 - c as f64;
        mse += d * d;
    }
    mse /= reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(max_value * max_value / mse))
}

/// Find the timestep of `target` whose `alpha_bar` is closest to
/// `alpha_bar` of `source` at `t_source`. Ties resolve to the smaller t.
pub fn match_timestep(
    source: &DiffusionSchedule,
    t_source: usize,
    target: &DiffusionSchedule,
) -> Result<usize> {
    let want = source.alpha_bar(t_source)?;
    let mut best_t = 0;
    let mut best_gap = f64::INFINITY;
    for t in 0..=target.steps() {
        let gap = (target.alpha_bar(t)? - want).abs();
        if gap < best_gap {
            best_gap = gap;
            best_t = t;
        }
    }
    Ok(best_t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrPoint {
    pub t: usize,
    pub mean_psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrCurve {
    pub points: Vec<PsnrPoint>,
    pub threshold: f64,
    /// Largest grid t whose mean PSNR stays at or above the threshold;
    /// 0 when none does.
    pub chosen_t: usize,
}

/// Sanitize `data` at each grid timestep and pick the strongest t* that
/// keeps the batch-mean PSNR at or above `threshold`.
///
/// The grid must be strictly increasing timesteps of `schedule`.
pub fn select_by_psnr(
    data: &Tensor,
    grid: &[usize],
    threshold: f64,
    schedule: &DiffusionSchedule,
    score: &dyn ScoreFunction,
    base_seed: u64,
    space: DataSpace,
    max_value: f64,
) -> Result<PsnrCurve> {
    if data.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if grid.is_empty() {
        return Err(Error::InvalidRange("empty timestep grid"));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidRange("grid must be strictly increasing"));
        }
    }
    if grid[0] < 1 || *grid.last().unwrap() > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            t: *grid.last().unwrap(),
            max: schedule.steps(),
        });
    }

    let mut points = Vec::with_capacity(grid.len());
    let mut chosen_t = 0;
    for &t in grid {
        // Per-t derived seed so grid points are independent draws.
        let seed_t = RngStream::new(base_seed, t as u64).next_u64();
        let mut acc = 0.0f64;
        for i in 0..data.rows() {
            let cleaned =
                sanitize_sample(data.row(i), i as u64, t, schedule, score, seed_t, space)?;
            acc += psnr(data.row(i), &cleaned, max_value)?;
        }
        let mean_psnr = acc / data.rows() as f64;
        if mean_psnr >= threshold {
            chosen_t = t;
        }
        points.push(PsnrPoint { t, mean_psnr });
    }
    Ok(PsnrCurve {
        points,
        threshold,
        chosen_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{GaussianMixtureSpec, OracleScore};

    #[test]
    fn psnr_known_values() {
        let zeros = [0.0f32; 4];
        let off = [0.1f32; 4];
        let p = psnr(&zeros, &off, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-5, "psnr {p}");
        assert!(psnr(&zeros, &zeros, 1.0).unwrap().is_infinite());
        // Doubling max_value adds ~6.02 dB.
        let p2 = psnr(&zeros, &off, 2.0).unwrap();
        assert!((p2 - p - 20.0 * math::log10(2.0)).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_bad_input() {
        assert!(psnr(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(psnr(&[], &[], 1.0).is_err());
        assert!(psnr(&[f32::NAN], &[0.0], 1.0).is_err());
        assert!(psnr(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn match_is_identity_on_same_schedule() {
        let s = DiffusionSchedule::default_linear();
        for t in [0, 1, 57, 400, 1000] {
            assert_eq!(match_timestep(&s, t, &s).unwrap(), t);
        }
    }

    #[test]
    fn linear_100_lands_near_cosine_200() {
        let lin = DiffusionSchedule::default_linear();
        let cos = DiffusionSchedule::default_cosine();
        let t = match_timestep(&lin, 100, &cos).unwrap();
        assert!((190..=210).contains(&t), "matched t = {t}");
    }

    #[test]
    fn match_endpoints() {
        let lin = DiffusionSchedule::default_linear();
        let cos = DiffusionSchedule::default_cosine();
        assert_eq!(match_timestep(&lin, 0, &cos).unwrap(), 0);
        // Both terminal alpha_bars are essentially zero.
        let t = match_timestep(&lin, 1000, &cos).unwrap();
        assert!(t > 900, "matched t = {t}");
    }

    #[test]
    fn psnr_curve_decreases_and_selects() {
        // A wide enough component that early timesteps genuinely preserve
        // sample identity while late ones collapse to the mean.
        let spec = GaussianMixtureSpec::single(alloc::vec![0.5, 0.5, 0.5, 0.5], 0.01).unwrap();
        let schedule = DiffusionSchedule::default_linear();
        let score = OracleScore::new(spec.clone(), schedule.clone());
        let mut rng = RngStream::new(5, 0);
        let mut vals = alloc::vec::Vec::new();
        for _ in 0..16 {
            vals.extend(spec.sample(&mut rng));
        }
        let data = Tensor::new(alloc::vec![16, 4], vals).unwrap();
        let grid = [5, 100, 400, 800];
        let curve = select_by_psnr(
            &data,
            &grid,
            20.0,
            &schedule,
            &score,
            42,
            DataSpace::Unit01,
            1.0,
        )
        .unwrap();
        assert_eq!(curve.points.len(), 4);
        // More noise, lower fidelity.
        assert!(curve.points[0].mean_psnr > curve.points[3].mean_psnr);
        // Chosen t is the largest point above threshold.
        let expect = grid
            .iter()
            .zip(&curve.points)
            .filter(|(_, p)| p.mean_psnr >= 20.0)
            .map(|(&t, _)| t)
            .last()
            .unwrap_or(0);
        assert_eq!(curve.chosen_t, expect);
    }

    #[test]
    fn grid_validation() {
        let spec = GaussianMixtureSpec::single(alloc::vec![0.0], 1e-4).unwrap();
        let schedule = DiffusionSchedule::default_linear();
        let score = OracleScore::new(spec, schedule.clone());
        let data = Tensor::new(alloc::vec![1, 1], alloc::vec![0.5]).unwrap();
        for bad in [&[][..], &[50, 50][..], &[100, 50][..], &[0, 10][..], &[1, 2000][..]] {
            assert!(
                select_by_psnr(
                    &data,
                    bad,
                    20.0,
                    &schedule,
                    &score,
                    0,
                    DataSpace::Unit01,
                    1.0
                )
                .is_err(),
                "grid {bad:?} accepted"
            );
        }
    }
}
