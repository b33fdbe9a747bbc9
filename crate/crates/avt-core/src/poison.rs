//! Desk-scale availability-attack lab: synthetic class-blob data, class-wise
//! shortcut poisoning, a small softmax classifier with SGD + milestone decay,
//! PGD adversarial training, and the noise-only ablation baseline.

use alloc::vec;
use alloc::vec::Vec;

use crate::bounds::{NormKind, PerturbationBudget};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Mlp, SgdMomentum};
use crate::oracle::{GaussianMixtureSpec, MixtureComponent};
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labels are 0-based class indices below `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        samples: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<LabeledDataset> {
        if samples.rows() != labels.len() {
            return Err(Error::ShapeMismatch);
        }
        if num_classes < 2 || labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::InvalidRange("label out of class range"));
        }
        Ok(LabeledDataset {
            samples,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.row_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonedDataset {
    pub base: LabeledDataset,
    /// Per-sample additive perturbations, post-clamp.
    pub perturbations: Tensor,
    pub budget: PerturbationBudget,
    pub attack: &'static str,
}

impl PoisonedDataset {
    /// `x + delta` as a plain labeled dataset.
    pub fn to_labeled(&self) -> LabeledDataset {
        let mut samples = self.base.samples.clone();
        for (v, &p) in samples
            .values_mut()
            .iter_mut()
            .zip(self.perturbations.values())
        {
            *v += p;
        }
        LabeledDataset {
            samples,
            labels: self.base.labels.clone(),
            num_classes: self.base.num_classes,
            split: self.base.split,
        }
    }

    /// Largest per-sample perturbation norm under the declared budget norm.
    pub fn max_norm(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.perturbations.rows() {
            let row = self.perturbations.row(i);
            let n = match self.budget.norm {
                NormKind::Linf => row.iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64)),
                NormKind::L2 => math::sqrt(
                    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>(),
                ),
            };
            worst = worst.max(n);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    /// Distance of each class mean from the data center 0.5.
    pub separation: f64,
    /// Per-coordinate Gaussian noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 2,
            train_per_class: 256,
            test_per_class: 128,
            dim: 64,
            separation: 0.12,
            noise: 0.04,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Exact generating mixture, usable as a score oracle.
    pub spec: GaussianMixtureSpec,
}

/// Class-conditional Gaussian blobs: means at `0.5 + separation * u_k` for
/// random unit directions `u_k`, isotropic noise. Values are not clamped, so
/// the returned mixture describes the data exactly.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.classes < 2 || cfg.dim < cfg.classes {
        return Err(Error::InvalidRange("need K >= 2 and d >= K"));
    }
    if cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::InvalidRange("per-class counts must be > 0"));
    }
    if !(cfg.noise >= 0.0) || !(cfg.separation >= 0.0) {
        return Err(Error::InvalidRange("noise and separation must be >= 0"));
    }

    let mut mean_rng = RngStream::new(cfg.seed, 0);
    let mut means: Vec<Vec<f32>> = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let mut u: Vec<f64> = (0..cfg.dim).map(|_| mean_rng.normal()).collect();
        let norm = math::sqrt(u.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
        u.iter_mut().for_each(|v| *v *= cfg.separation / norm);
        means.push(u.iter().map(|&v| (0.5 + v) as f32).collect());
    }

    let sample_split = |per_class: usize, stream: u64, split: Split| -> LabeledDataset {
        let mut rng = RngStream::new(cfg.seed, stream);
        let n = per_class * cfg.classes;
        let mut vals = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for k in 0..cfg.classes {
            for _ in 0..per_class {
                for j in 0..cfg.dim {
                    vals.push(means[k][j] + cfg.noise as f32 * rng.normal_f32());
                }
                labels.push(k);
            }
        }
        LabeledDataset {
            samples: Tensor::new(vec![n, cfg.dim], vals).unwrap(),
            labels,
            num_classes: cfg.classes,
            split,
        }
    };
    let train = sample_split(cfg.train_per_class, 1, Split::Train);
    let test = sample_split(cfg.test_per_class, 2, Split::Test);

    let w = 1.0 / cfg.classes as f64;
    let spec = GaussianMixtureSpec::new(
        cfg.dim,
        means
            .into_iter()
            .map(|mean| MixtureComponent {
                weight: w,
                mean,
                variance: cfg.noise * cfg.noise,
            })
            .collect(),
    )?;
    Ok(SyntheticData { train, test, spec })
}

/// Class-wise shortcut attack: one random sign (L-inf) or direction (L2)
/// pattern per class, scaled to the budget, added to every sample of that
/// class, then clamped to `[0, 1]`.
pub fn shortcut_attack(
    data: &LabeledDataset,
    budget: PerturbationBudget,
    seed: u64,
) -> Result<PoisonedDataset> {
    let d = data.dim();
    let eps = budget.epsilon as f32;
    let mut rng = RngStream::new(seed, 0);
    let mut patterns: Vec<Vec<f32>> = Vec::with_capacity(data.num_classes);
    for _ in 0..data.num_classes {
        let g = rng.normal_vec_f32(d);
        patterns.push(match budget.norm {
            NormKind::Linf => g
                .iter()
                .map(|&v| if v >= 0.0 { eps } else { -eps })
                .collect(),
            NormKind::L2 => {
                let norm = math::sqrt32(g.iter().map(|&v| v * v).sum::<f32>()).max(1e-12);
                g.iter().map(|&v| v * eps / norm).collect()
            }
        });
    }

    let mut perts = vec![0.0f32; data.len() * d];
    for i in 0..data.len() {
        let pat = &patterns[data.labels[i]];
        let x = data.samples.row(i);
        for j in 0..d {
            let clamped = (x[j] + pat[j]).clamp(0.0, 1.0);
            perts[i * d + j] = clamped - x[j];
        }
    }
    Ok(PoisonedDataset {
        base: data.clone(),
        perturbations: Tensor::new(vec![data.len(), d], perts)?,
        budget,
        attack: "shortcut",
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Epoch indices at which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f32,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64],
            epochs: 30,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![15, 25],
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub steps: usize,
    pub step_size: f32,
    pub epsilon: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetrics {
    pub epoch_test_acc: Vec<f64>,
    pub final_acc: f64,
    /// Early-stopping metric: best clean-test accuracy over epochs.
    pub best_acc: f64,
    pub final_loss: f64,
}

pub struct Classifier {
    dims: Vec<usize>,
    net: Mlp,
    pub metrics: TrainMetrics,
}

impl Classifier {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f32] {
        self.net.params()
    }

    pub fn from_parts(dims: &[usize], params: Vec<f32>) -> Result<Classifier> {
        let net = Mlp::from_params(dims, params).ok_or(Error::ShapeMismatch)?;
        Ok(Classifier {
            dims: dims.to_vec(),
            net,
            metrics: TrainMetrics {
                epoch_test_acc: Vec::new(),
                final_acc: 0.0,
                best_acc: 0.0,
                final_loss: 0.0,
            },
        })
    }

    pub fn predict(&self, samples: &Tensor) -> Result<Vec<usize>> {
        if samples.row_len() != self.dims[0] {
            return Err(Error::DimensionMismatch);
        }
        let rows = samples.rows();
        let k = *self.dims.last().unwrap();
        let logits = self.net.forward(samples.values(), rows);
        Ok((0..rows)
            .map(|i| {
                let row = &logits[i * k..(i + 1) * k];
                let mut best = 0;
                for c in 1..k {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

/// Fraction of correct argmax predictions.
pub fn evaluate(model: &Classifier, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = model.predict(&data.samples)?;
    let correct = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Softmax cross-entropy loss summed over the batch; writes the logit
/// gradient (mean-reduced) into `grad_out`.
fn softmax_xent(logits: &[f32], labels: &[usize], k: usize, grad_out: &mut [f32]) -> f64 {
    let b = labels.len();
    let scale = 1.0 / b as f32;
    let mut loss = 0.0f64;
    for i in 0..b {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut z = 0.0f32;
        for &v in row {
            z += math::exp32(v - max);
        }
        loss -= (row[labels[i]] - max - math::ln32(z)) as f64;
        for c in 0..k {
            let p = math::exp32(row[c] - max) / z;
            grad_out[i * k + c] = scale * (p - if c == labels[i] { 1.0 } else { 0.0 });
        }
    }
    loss / b as f64
}

fn train_impl(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ClassifierConfig,
    pgd: Option<&PgdConfig>,
    seed: u64,
) -> Result<Classifier> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if test.is_empty() || test.dim() != train.dim() || test.num_classes != train.num_classes {
        return Err(Error::DimensionMismatch);
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidRange("epochs and batch_size must be > 0"));
    }
    let d = train.dim();
    let k = train.num_classes;
    let mut dims = vec![d];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(k);

    let mut init_rng = RngStream::new(seed, 0);
    let mut net = Mlp::new(&dims, &mut init_rng);
    let mut opt = SgdMomentum::new(net.params().len(), cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut grad = vec![0.0f32; net.params().len()];
    let mut scratch = vec![0.0f32; net.params().len()];
    let attack = pgd.filter(|p| p.epsilon > 0.0 && p.steps > 0);

    let mut epoch_test_acc = Vec::with_capacity(cfg.epochs);
    let mut best_acc = 0.0f64;
    let mut last_loss = 0.0f64;
    for epoch in 0..cfg.epochs {
        if cfg.milestones.contains(&epoch) {
            opt.lr *= cfg.gamma;
        }
        let mut rng = RngStream::new(seed, 1 + epoch as u64);
        let order = rng.shuffled_indices(train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = vec![0.0f32; b * d];
            let mut y = Vec::with_capacity(b);
            for (bi, &idx) in chunk.iter().enumerate() {
                x[bi * d..(bi + 1) * d].copy_from_slice(train.samples.row(idx));
                y.push(train.labels[idx]);
            }

            if let Some(p) = attack {
                // Inner maximization: L-inf PGD around the clean batch,
                // clamped to the data range.
                let clean = x.clone();
                for _ in 0..p.steps {
                    let cache = net.forward_cached(&x, b);
                    let mut g_logits = vec![0.0f32; b * k];
                    softmax_xent(cache.acts.last().unwrap(), &y, k, &mut g_logits);
                    scratch.iter_mut().for_each(|v| *v = 0.0);
                    let gx = net.backward(&cache, &g_logits, &mut scratch);
                    for j in 0..b * d {
                        let stepped = x[j] + p.step_size * gx[j].signum();
                        x[j] = stepped
                            .clamp(clean[j] - p.epsilon, clean[j] + p.epsilon)
                            .clamp(0.0, 1.0);
                    }
                }
            }

            let cache = net.forward_cached(&x, b);
            let mut g_logits = vec![0.0f32; b * k];
            last_loss = softmax_xent(cache.acts.last().unwrap(), &y, k, &mut g_logits);
            if !last_loss.is_finite() {
                return Err(Error::Diverged("classifier loss became non-finite"));
            }
            grad.iter_mut().for_each(|v| *v = 0.0);
            net.backward(&cache, &g_logits, &mut grad);
            opt.step(net.params_mut(), &grad);
        }
        let snapshot = Classifier {
            dims: dims.clone(),
            net: Mlp::from_params(&dims, net.params().to_vec()).unwrap(),
            metrics: TrainMetrics {
                epoch_test_acc: Vec::new(),
                final_acc: 0.0,
                best_acc: 0.0,
                final_loss: 0.0,
            },
        };
        let acc = evaluate(&snapshot, test)?;
        best_acc = best_acc.max(acc);
        epoch_test_acc.push(acc);
    }
    let final_acc = *epoch_test_acc.last().unwrap();
    Ok(Classifier {
        dims,
        net,
        metrics: TrainMetrics {
            epoch_test_acc,
            final_acc,
            best_acc,
            final_loss: last_loss,
        },
    })
}

/// SGD-with-momentum training of a small MLP classifier, recording clean-test
/// accuracy per epoch plus the best-epoch (early-stopping) accuracy.
pub fn train_classifier(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Classifier> {
    train_impl(train, test, cfg, None, seed)
}

/// PGD adversarial training; `pgd.epsilon = 0` degenerates to
/// `train_classifier` with an identical trajectory.
pub fn adversarial_train(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ClassifierConfig,
    pgd: &PgdConfig,
    seed: u64,
) -> Result<Classifier> {
    if !(pgd.epsilon >= 0.0) {
        return Err(Error::InvalidRange("pgd epsilon must be >= 0"));
    }
    train_impl(train, test, cfg, Some(pgd), seed)
}

/// Forward-diffuse the poisoned data at `t_star` with no reverse process:
/// the noise-only comparison baseline.
pub fn noise_only_ablation(
    data: &PoisonedDataset,
    t_star: usize,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut noisy = data.to_labeled();
    if t_star == 0 {
        return Ok(noisy);
    }
    let ab = schedule.alpha_bar(t_star)?;
    let (sig, ns) = (math::sqrt(ab) as f32, math::sqrt(1.0 - ab) as f32);
    let d = noisy.dim();
    for i in 0..noisy.len() {
        let mut rng = RngStream::new(seed, i as u64);
        let row = noisy.samples.row_mut(i);
        for j in 0..d {
            row[j] = sig * row[j] + ns * rng.normal_f32();
        }
    }
    Ok(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SyntheticData {
        generate_synthetic_dataset(&SyntheticConfig {
            classes: 2,
            train_per_class: 128,
            test_per_class: 64,
            dim: 16,
            separation: 0.25,
            noise: 0.03,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let a = toy();
        let b = toy();
        assert_eq!(a.train.samples.values(), b.train.samples.values());
        assert_eq!(a.train.len(), 256);
        assert_eq!(a.test.len(), 128);
        assert_eq!(a.train.dim(), 16);
        assert_eq!(a.spec.components.len(), 2);
    }

    #[test]
    fn generation_rejects_bad_config() {
        let mut cfg = SyntheticConfig::default();
        cfg.classes = 1;
        assert!(generate_synthetic_dataset(&cfg).is_err());
        let mut cfg = SyntheticConfig::default();
        cfg.dim = 1;
        assert!(generate_synthetic_dataset(&cfg).is_err());
        let mut cfg = SyntheticConfig::default();
        cfg.train_per_class = 0;
        assert!(generate_synthetic_dataset(&cfg).is_err());
    }

    #[test]
    fn shortcut_budget_enforced() {
        let data = toy();
        let eps = 8.0 / 255.0;
        let p = shortcut_attack(
            &data.train,
            PerturbationBudget::new(NormKind::Linf, eps).unwrap(),
            7,
        )
        .unwrap();
        assert!(p.max_norm() <= eps + 1e-7);
        // Coordinates away from the clamp boundary carry the full magnitude.
        let hit_full = p
            .perturbations
            .values()
            .iter()
            .filter(|v| (v.abs() - eps as f32).abs() < 1e-7)
            .count();
        assert!(hit_full > p.perturbations.len() / 2);
        // Poisoned values stay in range.
        let lab = p.to_labeled();
        assert!(lab.samples.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_budget_attack_is_identity() {
        let data = toy();
        let p = shortcut_attack(
            &data.train,
            PerturbationBudget::new(NormKind::Linf, 0.0).unwrap(),
            7,
        )
        .unwrap();
        assert!(p.perturbations.values().iter().all(|&v| v == 0.0));
        assert_eq!(p.to_labeled().samples.values(), data.train.samples.values());
    }

    #[test]
    fn l2_budget_enforced() {
        let data = toy();
        let p = shortcut_attack(
            &data.train,
            PerturbationBudget::new(NormKind::L2, 0.3).unwrap(),
            7,
        )
        .unwrap();
        assert!(p.max_norm() <= 0.3 + 1e-6);
    }

    #[test]
    fn clean_training_separates() {
        let data = toy();
        let cfg = ClassifierConfig {
            epochs: 12,
            milestones: vec![8],
            ..ClassifierConfig::default()
        };
        let model = train_classifier(&data.train, &data.test, &cfg, 1).unwrap();
        assert!(model.metrics.final_acc >= 0.95, "{:?}", model.metrics);
        assert!(model.metrics.best_acc >= model.metrics.final_acc);
        assert_eq!(model.metrics.epoch_test_acc.len(), 12);
    }

    #[test]
    fn zero_separation_stays_near_chance() {
        let data = generate_synthetic_dataset(&SyntheticConfig {
            separation: 0.0,
            dim: 8,
            train_per_class: 64,
            test_per_class: 64,
            noise: 0.05,
            seed: 9,
            classes: 2,
        })
        .unwrap();
        let cfg = ClassifierConfig {
            epochs: 8,
            milestones: vec![],
            ..ClassifierConfig::default()
        };
        let model = train_classifier(&data.train, &data.test, &cfg, 1).unwrap();
        assert!(model.metrics.final_acc <= 0.60, "{:?}", model.metrics);
    }

    #[test]
    fn adversarial_with_zero_eps_matches_vanilla() {
        let data = toy();
        let cfg = ClassifierConfig {
            epochs: 3,
            milestones: vec![],
            ..ClassifierConfig::default()
        };
        let vanilla = train_classifier(&data.train, &data.test, &cfg, 4).unwrap();
        let at = adversarial_train(
            &data.train,
            &data.test,
            &cfg,
            &PgdConfig {
                steps: 10,
                step_size: 0.01,
                epsilon: 0.0,
            },
            4,
        )
        .unwrap();
        assert_eq!(vanilla.params(), at.params());
        assert_eq!(vanilla.metrics, at.metrics);
    }

    #[test]
    fn untrained_model_near_chance() {
        let data = toy();
        let mut rng = RngStream::new(3, 0);
        let net = Mlp::new(&[16, 64, 2], &mut rng);
        let model = Classifier::from_parts(&[16, 64, 2], net.params().to_vec()).unwrap();
        let acc = evaluate(&model, &data.test).unwrap();
        // Binomial 3-sigma band around 1/2 for n = 128.
        assert!((acc - 0.5).abs() <= 3.0 * 0.5 / (128.0f64).sqrt(), "acc {acc}");
    }

    #[test]
    fn evaluate_rejects_empty_and_mismatched() {
        let data = toy();
        let model = {
            let mut rng = RngStream::new(0, 0);
            let net = Mlp::new(&[16, 8, 2], &mut rng);
            Classifier::from_parts(&[16, 8, 2], net.params().to_vec()).unwrap()
        };
        let empty = LabeledDataset::new(
            Tensor::new(vec![0, 16], vec![]).unwrap(),
            vec![],
            2,
            Split::Test,
        )
        .unwrap();
        assert!(matches!(evaluate(&model, &empty), Err(Error::EmptyDataset)));
        let wrong = LabeledDataset::new(
            Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap(),
            vec![0],
            2,
            Split::Test,
        )
        .unwrap();
        assert!(evaluate(&model, &wrong).is_err());
        drop(data);
    }

    #[test]
    fn noise_ablation_identity_and_noise_limits() {
        let data = toy();
        let p = shortcut_attack(
            &data.train,
            PerturbationBudget::new(NormKind::Linf, 8.0 / 255.0).unwrap(),
            7,
        )
        .unwrap();
        let schedule = DiffusionSchedule::default_linear();
        let same = noise_only_ablation(&p, 0, &schedule, 1).unwrap();
        assert_eq!(same.samples.values(), p.to_labeled().samples.values());
        // At t = T the signal coefficient is ~0: mean near 0, variance near 1.
        let noisy = noise_only_ablation(&p, schedule.steps(), &schedule, 1).unwrap();
        let vals = noisy.samples.values();
        let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
        let var: f64 =
            vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }
}
