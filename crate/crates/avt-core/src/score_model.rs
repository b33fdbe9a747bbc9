//! Learned score network: an MLP that predicts the forward noise
//! `eps` from `(x_t, t)`, trained with the standard denoising objective.
//! The score follows as `s(x, t) = -eps_hat / sqrt(1 - alpha_bar_t)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::ScoreFunction;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Adam, Mlp};
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Sinusoidal time-embedding width; must be even.
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![128, 128],
            time_embed_dim: 32,
            epochs: 40,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

pub struct ScoreModel {
    data_dim: usize,
    time_embed_dim: usize,
    hidden: Vec<usize>,
    net: Mlp,
}

fn time_embedding(t: usize, dim: usize, out: &mut [f32]) {
    let half = dim / 2;
    let tf = t as f32;
    for k in 0..half {
        // Frequencies log-spaced from 1 down to 1/10000.
        let w = libm::expf(-libm::logf(10000.0) * k as f32 / half.max(1) as f32);
        out[2 * k] = math::sin32(tf * w);
        out[2 * k + 1] = math::cos32(tf * w);
    }
}

impl ScoreModel {
    pub fn new(
        data_dim: usize,
        time_embed_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<ScoreModel> {
        if data_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidRange("empty model dimensions"));
        }
        if time_embed_dim == 0 || time_embed_dim % 2 != 0 {
            return Err(Error::InvalidRange("time_embed_dim must be even and > 0"));
        }
        let mut dims = vec![data_dim + time_embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        Ok(ScoreModel {
            data_dim,
            time_embed_dim,
            hidden: hidden.to_vec(),
            net: Mlp::new(&dims, rng),
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &[f32] {
        self.net.params()
    }

    pub fn from_parts(
        data_dim: usize,
        time_embed_dim: usize,
        hidden: &[usize],
        params: Vec<f32>,
    ) -> Result<ScoreModel> {
        let mut dims = vec![data_dim + time_embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let net = Mlp::from_params(&dims, params).ok_or(Error::ShapeMismatch)?;
        Ok(ScoreModel {
            data_dim,
            time_embed_dim,
            hidden: hidden.to_vec(),
            net,
        })
    }

    fn batch_input(&self, batch: &Tensor, t: usize) -> Vec<f32> {
        let rows = if batch.dims().len() <= 1 { 1 } else { batch.rows() };
        let d = self.data_dim;
        let width = d + self.time_embed_dim;
        let mut input = vec![0.0f32; rows * width];
        let mut embed = vec![0.0f32; self.time_embed_dim];
        time_embedding(t, self.time_embed_dim, &mut embed);
        for i in 0..rows {
            input[i * width..i * width + d].copy_from_slice(batch.row(i));
            input[i * width + d..(i + 1) * width].copy_from_slice(&embed);
        }
        input
    }

    /// Predicted forward noise for each row of `batch` at timestep `t`.
    pub fn predict_eps(&self, batch: &Tensor, t: usize) -> Result<Tensor> {
        if batch.row_len() != self.data_dim {
            return Err(Error::DimensionMismatch);
        }
        let rows = if batch.dims().len() <= 1 { 1 } else { batch.rows() };
        let input = self.batch_input(batch, t);
        let out = self.net.forward(&input, rows);
        Tensor::new(batch.dims().to_vec(), out)
    }
}

/// Convert an eps prediction into a score: `s = -eps / sqrt(1 - alpha_bar_t)`.
pub fn eps_to_score(eps: &Tensor, schedule: &DiffusionSchedule, t: usize) -> Result<Tensor> {
    if t == 0 {
        return Err(Error::IndexOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    let ab = schedule.alpha_bar(t)?;
    let scale = (-1.0 / math::sqrt(1.0 - ab)) as f32;
    let mut out = eps.clone();
    out.map_in_place(|v| scale * v);
    Ok(out)
}

pub struct LearnedScore {
    pub model: ScoreModel,
    pub schedule: DiffusionSchedule,
}

impl ScoreFunction for LearnedScore {
    fn evaluate(&self, batch: &Tensor, t: usize) -> Result<Tensor> {
        let eps = self.model.predict_eps(batch, t)?;
        eps_to_score(&eps, &self.schedule, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean denoising loss per epoch.
    pub epoch_losses: Vec<f32>,
    pub final_loss: f32,
}

/// Train an eps-prediction model on the rows of `data` with the usual
/// objective: sample `t` uniformly, corrupt with the forward process, and
/// regress the injected noise under squared error, optimized by Adam.
pub fn train_score_model(
    data: &Tensor,
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
) -> Result<(ScoreModel, TrainReport)> {
    if data.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidRange("epochs and batch_size must be > 0"));
    }
    let d = data.row_len();
    let n = data.rows();
    let mut init_rng = RngStream::new(config.seed, 0);
    let mut model = ScoreModel::new(d, config.time_embed_dim, &config.hidden, &mut init_rng)?;
    let mut opt = Adam::new(model.net.params().len(), config.lr);
    let mut grad = vec![0.0f32; model.net.params().len()];
    let width = d + config.time_embed_dim;
    let t_steps = schedule.steps();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = RngStream::new(config.seed, 1 + epoch as u64);
        let order = rng.shuffled_indices(n);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut input = vec![0.0f32; b * width];
            let mut noise = vec![0.0f32; b * d];
            let mut embed = vec![0.0f32; config.time_embed_dim];
            for (bi, &idx) in chunk.iter().enumerate() {
                let t = rng.below(t_steps) + 1;
                let ab = schedule.alpha_bar(t)? as f32;
                let (sig, ns) = (math::sqrt32(ab), math::sqrt32(1.0 - ab));
                time_embedding(t, config.time_embed_dim, &mut embed);
                let x0 = data.row(idx);
                for j in 0..d {
                    let e = rng.normal_f32();
                    noise[bi * d + j] = e;
                    input[bi * width + j] = sig * x0[j] + ns * e;
                }
                input[bi * width + d..(bi + 1) * width].copy_from_slice(&embed);
            }
            let cache = model.net.forward_cached(&input, b);
            let pred = cache.acts.last().unwrap();
            let scale = 1.0 / (b * d) as f32;
            let mut grad_out = vec![0.0f32; b * d];
            let mut loss = 0.0f64;
            for j in 0..b * d {
                let diff = pred[j] - noise[j];
                loss += (diff as f64) * (diff as f64);
                grad_out[j] = 2.0 * scale * diff;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.net.backward(&cache, &grad_out, &mut grad);
            opt.step(model.net.params_mut(), &grad);
            epoch_loss += loss;
            seen += b * d;
        }
        epoch_losses.push((epoch_loss / seen as f64) as f32);
    }
    let final_loss = *epoch_losses.last().unwrap();
    if !final_loss.is_finite() {
        return Err(Error::Diverged("score training produced non-finite loss"));
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            final_loss,
        },
    ))
}
