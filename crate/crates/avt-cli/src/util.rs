//! Shared CLI plumbing: schedule construction, score sources, and the
//! thread-count-independent parallel sanitizer.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avt_core::diffusion::{sanitize_sample, DataSpace, ScoreFunction};
use avt_core::oracle::OracleScore;
use avt_core::schedule::{self, DiffusionSchedule};
use avt_core::score_model::{LearnedScore, ScoreModel};
use avt_core::Tensor;
use clap::Args;
use rayon::prelude::*;

use crate::format;

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    /// Variance schedule: linear or cosine.
    #[arg(long, default_value = "linear")]
    pub schedule: String,
    #[arg(long, default_value_t = schedule::DEFAULT_T)]
    pub steps: usize,
    #[arg(long, default_value_t = schedule::DEFAULT_BETA_START)]
    pub beta_start: f64,
    #[arg(long, default_value_t = schedule::DEFAULT_BETA_END)]
    pub beta_end: f64,
    #[arg(long, default_value_t = schedule::DEFAULT_COSINE_OFFSET)]
    pub cosine_offset: f64,
}

impl ScheduleArgs {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        build_schedule(
            &self.schedule,
            self.steps,
            self.beta_start,
            self.beta_end,
            self.cosine_offset,
        )
    }
}

pub fn build_schedule(
    kind: &str,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    cosine_offset: f64,
) -> Result<DiffusionSchedule> {
    match kind {
        "linear" => DiffusionSchedule::linear(steps, beta_start, beta_end)
            .map_err(|e| anyhow::anyhow!("schedule: {e}")),
        "cosine" => DiffusionSchedule::cosine(steps, cosine_offset)
            .map_err(|e| anyhow::anyhow!("schedule: {e}")),
        other => bail!("unknown schedule kind {other:?} (expected linear or cosine)"),
    }
}

/// Where the score function comes from: a closed-form mixture oracle or a
/// trained checkpoint.
#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Mixture-spec JSON for an exact oracle score.
    #[arg(long, conflicts_with = "model")]
    pub oracle_spec: Option<PathBuf>,
    /// Trained score-model checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl ScoreArgs {
    pub fn load(&self, schedule: &DiffusionSchedule) -> Result<Box<dyn ScoreFunction>> {
        match (&self.oracle_spec, &self.model) {
            (Some(spec_path), None) => {
                let spec = format::read_spec(spec_path)?;
                Ok(Box::new(OracleScore::new(spec, schedule.clone())))
            }
            (None, Some(model_path)) => Ok(Box::new(load_score_checkpoint(
                model_path,
                schedule.clone(),
            )?)),
            _ => bail!("exactly one of --oracle-spec or --model is required"),
        }
    }
}

pub fn load_score_checkpoint(path: &Path, schedule: DiffusionSchedule) -> Result<LearnedScore> {
    let (header, params) = format::read_checkpoint(path)?;
    if header.kind != "score" {
        bail!("{}: checkpoint kind {:?}, expected score", path.display(), header.kind);
    }
    let data_dim = header.data_dim.context("score checkpoint missing data_dim")?;
    let embed = header
        .time_embed_dim
        .context("score checkpoint missing time_embed_dim")?;
    if let Some(h) = &header.schedule_hash {
        let actual = format::schedule_hash(&schedule);
        if *h != actual {
            bail!(
                "{}: checkpoint was trained against a different schedule",
                path.display()
            );
        }
    }
    // layer_dims is [data_dim + embed, hidden..., data_dim].
    if header.layer_dims.len() < 3 {
        bail!("{}: malformed layer dims", path.display());
    }
    let hidden = &header.layer_dims[1..header.layer_dims.len() - 1];
    let model = ScoreModel::from_parts(data_dim, embed, hidden, params)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(LearnedScore { model, schedule })
}

pub fn parse_space(s: &str) -> Result<DataSpace> {
    match s {
        "unit01" => Ok(DataSpace::Unit01),
        "image01" => Ok(DataSpace::Image01),
        "unbounded" => Ok(DataSpace::Unbounded),
        other => bail!("unknown data space {other:?}"),
    }
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().context("parsing integer list"))
        .collect()
}

pub fn parse_f32_list(s: &str) -> Result<Vec<f32>> {
    s.split(',')
        .map(|p| p.trim().parse::<f32>().context("parsing float list"))
        .collect()
}

/// Sanitize a batch row-parallel. Every sample draws from its own RNG
/// stream keyed by row index, so the result is bitwise identical for any
/// thread count.
pub fn sanitize_parallel(
    batch: &Tensor,
    t_star: usize,
    schedule: &DiffusionSchedule,
    score: &dyn ScoreFunction,
    base_seed: u64,
    space: DataSpace,
    threads: usize,
) -> Result<Tensor> {
    let run = || -> Result<Tensor> {
        let d = batch.row_len();
        let rows: Vec<Vec<f32>> = (0..batch.rows())
            .into_par_iter()
            .map(|i| {
                sanitize_sample(batch.row(i), i as u64, t_star, schedule, score, base_seed, space)
                    .map_err(|e| anyhow::anyhow!("sample {i}: {e}"))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(batch.len());
        for r in rows {
            values.extend(r);
        }
        Tensor::new(vec![batch.rows(), d], values).map_err(|e| anyhow::anyhow!("{e}"))
    };
    if threads == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building thread pool")?
            .install(run)
    }
}
