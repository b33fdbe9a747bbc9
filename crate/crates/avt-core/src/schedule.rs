//! Variance schedules for the forward corruption chain.
//!
//! A schedule holds `beta_t` for `t = 1..=T` together with the cumulative
//! signal retention `alpha_bar_t = prod_{s<=t} (1 - beta_s)`, with
//! `alpha_bar_0 = 1` (empty product). The `alpha_bar` table is precomputed
//! with the exact recurrence so results are bit-reproducible.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
/// Clamp for the cosine-derived betas near `t = T`.
pub const COSINE_BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    kind: ScheduleKind,
    /// `betas[t-1]` is `beta_t`, `t = 1..=T`.
    betas: Vec<f64>,
    /// `alpha_bars[t]` is `alpha_bar_t`, `t = 0..=T`; `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Betas linearly interpolated from `beta_start` (t=1) to `beta_end` (t=T).
    pub fn linear(t_count: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_count < 1 {
            return Err(Error::InvalidRange("T must be >= 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange("need 0 < beta_start <= beta_end < 1"));
        }
        let betas: Vec<f64> = (0..t_count)
            .map(|i| {
                if t_count == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas_unchecked(ScheduleKind::Linear, betas))
    }

    /// Cosine schedule: `alpha_bar_t = f(t)/f(0)` with
    /// `f(t) = cos^2(((t/T + s)/(1+s)) * pi/2)`, betas clamped to 0.999 and
    /// the `alpha_bar` table rebuilt from the clamped betas so the recurrence
    /// stays exact.
    pub fn cosine(t_count: usize, s_offset: f64) -> Result<Self> {
        if t_count < 1 {
            return Err(Error::InvalidRange("T must be >= 1"));
        }
        if !(s_offset > 0.0) {
            return Err(Error::InvalidRange("cosine offset must be > 0"));
        }
        let f = |t: f64| {
            let c = math::cos(((t / t_count as f64 + s_offset) / (1.0 + s_offset))
                * core::f64::consts::FRAC_PI_2);
            c * c
        };
        let f0 = f(0.0);
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(t_count);
        for t in 1..=t_count {
            let ab = f(t as f64) / f0;
            let beta = (1.0 - ab / prev).min(COSINE_BETA_MAX);
            betas.push(beta);
            prev = ab;
        }
        Ok(Self::from_betas_unchecked(ScheduleKind::Cosine, betas))
    }

    /// Schedule from explicit betas; each must lie in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidRange("T must be >= 1"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidRange("every beta must be in (0, 1)"));
        }
        Ok(Self::from_betas_unchecked(ScheduleKind::Custom, betas))
    }

    fn from_betas_unchecked(kind: ScheduleKind, betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        DiffusionSchedule {
            kind,
            betas,
            alpha_bars,
        }
    }

    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default params")
    }

    pub fn default_cosine() -> Self {
        Self::cosine(DEFAULT_T, DEFAULT_COSINE_OFFSET).expect("default params")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Step count T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        if t < 1 || t > self.steps() {
            return Err(Error::IndexOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(self.betas[t - 1])
    }

    /// `alpha_bar_t` for `0 <= t <= T`; `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                t,
                max: self.steps(),
            })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}
