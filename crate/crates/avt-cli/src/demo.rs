//! The end-to-end toy pipeline: generate, attack, pick t*, sanitize, train
//! classifiers on every variant, evaluate, and persist a verifiable record.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use avt_core::diffusion::{DataSpace, ScoreFunction};
use avt_core::oracle::OracleScore;
use avt_core::poison::{
    adversarial_train, evaluate, generate_synthetic_dataset, noise_only_ablation,
    shortcut_attack, train_classifier, Classifier, ClassifierConfig, LabeledDataset, PgdConfig,
    SyntheticConfig,
};
use avt_core::score_model::{train_score_model, LearnedScore, TrainConfig};
use avt_core::select::select_by_psnr;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::format::{self, AttackMeta, CheckpointHeader};
use crate::record::{MetricsLog, RunRecord};
use crate::util;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoConfig {
    pub seed: u64,
    pub threads: usize,
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub epsilon: f64,
    pub norm: String,
    pub schedule: String,
    pub steps: usize,
    pub psnr_grid: Vec<usize>,
    pub psnr_threshold: f64,
    /// Bypass PSNR selection with a fixed t* (0 = identity sanitization).
    pub t_star_override: Option<usize>,
    /// "oracle" uses the generator's mixture; "trained" fits a score model
    /// on the poisoned data first.
    pub score: String,
    #[serde(default = "default_score_epochs")]
    pub score_epochs: usize,
    pub classifier_epochs: usize,
    pub adv_train: bool,
    pub ablation: bool,
}

fn default_score_epochs() -> usize {
    200
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 4,
            threads: 0,
            classes: 2,
            dim: 64,
            train_per_class: 256,
            test_per_class: 128,
            separation: 0.15,
            noise: 0.04,
            epsilon: 16.0 / 255.0,
            norm: "linf".into(),
            schedule: "linear".into(),
            steps: 1000,
            psnr_grid: vec![25, 50, 100, 200],
            psnr_threshold: 22.0,
            t_star_override: None,
            score: "oracle".into(),
            score_epochs: 200,
            classifier_epochs: 30,
            adv_train: false,
            ablation: true,
        }
    }
}

pub struct DemoSummary {
    pub t_star: usize,
    pub clean_acc: f64,
    pub poisoned_acc: f64,
    pub sanitized_acc: f64,
    pub ablation_acc: Option<f64>,
    pub adv_acc: Option<f64>,
    pub record_path: PathBuf,
}

fn classifier_cfg(epochs: usize) -> ClassifierConfig {
    ClassifierConfig {
        epochs,
        milestones: vec![epochs / 2, epochs * 5 / 6],
        ..ClassifierConfig::default()
    }
}

fn report_classifier(
    log: &MetricsLog,
    name: &str,
    model: &Classifier,
    acc: f64,
) -> Result<()> {
    log.append(&json!({
        "stage": "train-classifier",
        "variant": name,
        "final_acc": model.metrics.final_acc,
        "best_acc": model.metrics.best_acc,
        "clean_test_acc": acc,
        "epoch_test_acc": model.metrics.epoch_test_acc,
    }))
}

fn save_classifier(dir: &Path, name: &str, model: &Classifier, seed: u64) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.ckpt"));
    format::write_checkpoint(
        &path,
        &CheckpointHeader {
            kind: "classifier".into(),
            layer_dims: model.dims().to_vec(),
            data_dim: None,
            time_embed_dim: None,
            schedule_hash: None,
            seed,
        },
        model.params(),
    )?;
    Ok(path)
}

pub fn run_demo_e2e(cfg: &DemoConfig, out_dir: &Path) -> Result<DemoSummary> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let config_value = serde_json::to_value(cfg)?;
    let mut record = RunRecord::new(config_value);
    let log = MetricsLog::create(out_dir.join("metrics.jsonl"))?;
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let timed = |record: &mut RunRecord, stage: &str, start: Instant| {
        record.timings.push(crate::record::StageTiming {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
    };

    let result = (|| -> Result<DemoSummary> {
        // Generate.
        let t0 = Instant::now();
        let synth = generate_synthetic_dataset(&SyntheticConfig {
            classes: cfg.classes,
            train_per_class: cfg.train_per_class,
            test_per_class: cfg.test_per_class,
            dim: cfg.dim,
            separation: cfg.separation,
            noise: cfg.noise,
            seed: cfg.seed,
        })
        .map_err(|e| anyhow::anyhow!("generate: {e}"))?;
        let clean_train_path = out_dir.join("clean_train.avt1");
        let clean_test_path = out_dir.join("clean_test.avt1");
        let spec_path = out_dir.join("spec.json");
        format::write_dataset(&clean_train_path, &synth.train, None)?;
        format::write_dataset(&clean_test_path, &synth.test, None)?;
        format::write_spec(&spec_path, &synth.spec)?;
        artifacts.extend([
            clean_train_path.clone(),
            format::sidecar_path(&clean_train_path),
            clean_test_path.clone(),
            format::sidecar_path(&clean_test_path),
            spec_path.clone(),
        ]);
        timed(&mut record, "generate", t0);

        // Attack.
        let t0 = Instant::now();
        let budget = format::budget_from_args(&cfg.norm, cfg.epsilon)?;
        let attack_seed = cfg.seed.wrapping_add(1);
        let poisoned = shortcut_attack(&synth.train, budget, attack_seed)
            .map_err(|e| anyhow::anyhow!("attack: {e}"))?;
        let poisoned_train = poisoned.to_labeled();
        let poisoned_path = out_dir.join("poisoned_train.avt1");
        format::write_dataset(
            &poisoned_path,
            &poisoned_train,
            Some(AttackMeta {
                attack: poisoned.attack.into(),
                norm: cfg.norm.clone(),
                epsilon: cfg.epsilon,
                seed: attack_seed,
            }),
        )?;
        artifacts.extend([poisoned_path.clone(), format::sidecar_path(&poisoned_path)]);
        log.append(&json!({
            "stage": "attack",
            "attack": "shortcut",
            "epsilon": cfg.epsilon,
            "max_perturbation_norm": poisoned.max_norm(),
        }))?;
        timed(&mut record, "attack", t0);

        // Score function.
        let t0 = Instant::now();
        let schedule = util::build_schedule(&cfg.schedule, cfg.steps,
            avt_core::schedule::DEFAULT_BETA_START, avt_core::schedule::DEFAULT_BETA_END,
            avt_core::schedule::DEFAULT_COSINE_OFFSET)?;
        let score: Box<dyn ScoreFunction> = match cfg.score.as_str() {
            "oracle" => Box::new(OracleScore::new(synth.spec.clone(), schedule.clone())),
            "trained" => {
                let train_cfg = TrainConfig {
                    seed: cfg.seed.wrapping_add(2),
                    epochs: cfg.score_epochs,
                    ..TrainConfig::default()
                };
                let (model, report) =
                    train_score_model(&poisoned_train.samples, &schedule, &train_cfg)
                        .map_err(|e| anyhow::anyhow!("train-score: {e}"))?;
                log.append(&json!({
                    "stage": "train-score",
                    "final_loss": report.final_loss,
                    "epochs": train_cfg.epochs,
                }))?;
                let ckpt = out_dir.join("score.ckpt");
                let mut dims = vec![model.data_dim() + model.time_embed_dim()];
                dims.extend_from_slice(model.hidden());
                dims.push(model.data_dim());
                format::write_checkpoint(
                    &ckpt,
                    &CheckpointHeader {
                        kind: "score".into(),
                        layer_dims: dims,
                        data_dim: Some(model.data_dim()),
                        time_embed_dim: Some(model.time_embed_dim()),
                        schedule_hash: Some(format::schedule_hash(&schedule)),
                        seed: train_cfg.seed,
                    },
                    model.params(),
                )?;
                artifacts.push(ckpt);
                Box::new(LearnedScore {
                    model,
                    schedule: schedule.clone(),
                })
            }
            other => anyhow::bail!("unknown score source {other:?}"),
        };
        timed(&mut record, "score", t0);

        // Select t*.
        let t0 = Instant::now();
        let t_star = match cfg.t_star_override {
            Some(t) => {
                log.append(&json!({"stage": "select", "t_star": t, "mode": "override"}))?;
                t
            }
            None => {
                let curve = select_by_psnr(
                    &poisoned_train.samples,
                    &cfg.psnr_grid,
                    cfg.psnr_threshold,
                    &schedule,
                    score.as_ref(),
                    cfg.seed.wrapping_add(3),
                    DataSpace::Unit01,
                    1.0,
                )
                .map_err(|e| anyhow::anyhow!("select: {e}"))?;
                let curve_json = json!({
                    "threshold": curve.threshold,
                    "chosen_t": curve.chosen_t,
                    "points": curve.points.iter()
                        .map(|p| json!({"t": p.t, "mean_psnr": p.mean_psnr}))
                        .collect::<Vec<_>>(),
                });
                let curve_path = out_dir.join("psnr_curve.json");
                fs::write(&curve_path, serde_json::to_vec_pretty(&curve_json)?)?;
                artifacts.push(curve_path);
                log.append(&json!({"stage": "select", "t_star": curve.chosen_t,
                                   "mode": "psnr", "curve": curve_json}))?;
                curve.chosen_t
            }
        };
        timed(&mut record, "select", t0);

        // Sanitize.
        let t0 = Instant::now();
        let sanitized_samples = util::sanitize_parallel(
            &poisoned_train.samples,
            t_star,
            &schedule,
            score.as_ref(),
            cfg.seed.wrapping_add(4),
            DataSpace::Unit01,
            cfg.threads,
        )?;
        let sanitized_train = LabeledDataset::new(
            sanitized_samples,
            poisoned_train.labels.clone(),
            poisoned_train.num_classes,
            poisoned_train.split,
        )
        .map_err(|e| anyhow::anyhow!("sanitize: {e}"))?;
        let sanitized_path = out_dir.join("sanitized_train.avt1");
        format::write_dataset(&sanitized_path, &sanitized_train, None)?;
        artifacts.extend([sanitized_path.clone(), format::sidecar_path(&sanitized_path)]);
        timed(&mut record, "sanitize", t0);

        // Classifiers.
        let t0 = Instant::now();
        let ccfg = classifier_cfg(cfg.classifier_epochs);
        let cls_seed = cfg.seed.wrapping_add(6);
        let clean_model = train_classifier(&synth.train, &synth.test, &ccfg, cls_seed)
            .map_err(|e| anyhow::anyhow!("clean classifier: {e}"))?;
        let poisoned_model = train_classifier(&poisoned_train, &synth.test, &ccfg, cls_seed)
            .map_err(|e| anyhow::anyhow!("poisoned classifier: {e}"))?;
        let sanitized_model = train_classifier(&sanitized_train, &synth.test, &ccfg, cls_seed)
            .map_err(|e| anyhow::anyhow!("sanitized classifier: {e}"))?;
        let clean_acc = evaluate(&clean_model, &synth.test)?;
        let poisoned_acc = evaluate(&poisoned_model, &synth.test)?;
        let sanitized_acc = evaluate(&sanitized_model, &synth.test)?;
        report_classifier(&log, "clean", &clean_model, clean_acc)?;
        report_classifier(&log, "poisoned", &poisoned_model, poisoned_acc)?;
        report_classifier(&log, "sanitized", &sanitized_model, sanitized_acc)?;
        for (name, model) in [
            ("clean", &clean_model),
            ("poisoned", &poisoned_model),
            ("sanitized", &sanitized_model),
        ] {
            artifacts.push(save_classifier(out_dir, name, model, cls_seed)?);
        }

        let ablation_acc = if cfg.ablation {
            let noisy = noise_only_ablation(&poisoned, t_star, &schedule, cfg.seed.wrapping_add(5))
                .map_err(|e| anyhow::anyhow!("ablation: {e}"))?;
            let model = train_classifier(&noisy, &synth.test, &ccfg, cls_seed)
                .map_err(|e| anyhow::anyhow!("ablation classifier: {e}"))?;
            let acc = evaluate(&model, &synth.test)?;
            report_classifier(&log, "noise-only", &model, acc)?;
            Some(acc)
        } else {
            None
        };
        let adv_acc = if cfg.adv_train {
            let pgd = PgdConfig {
                steps: 10,
                step_size: (cfg.epsilon / 4.0) as f32,
                epsilon: (2.0 * cfg.epsilon) as f32,
            };
            let model = adversarial_train(&poisoned_train, &synth.test, &ccfg, &pgd, cls_seed)
                .map_err(|e| anyhow::anyhow!("adversarial training: {e}"))?;
            let acc = evaluate(&model, &synth.test)?;
            report_classifier(&log, "adversarial", &model, acc)?;
            Some(acc)
        } else {
            None
        };
        timed(&mut record, "classifiers", t0);

        log.append(&json!({
            "stage": "summary",
            "t_star": t_star,
            "clean_acc": clean_acc,
            "poisoned_acc": poisoned_acc,
            "sanitized_acc": sanitized_acc,
            "ablation_acc": ablation_acc,
            "adv_acc": adv_acc,
        }))?;

        Ok(DemoSummary {
            t_star,
            clean_acc,
            poisoned_acc,
            sanitized_acc,
            ablation_acc,
            adv_acc,
            record_path: out_dir.join("record.json"),
        })
    })();

    artifacts.push(log.path().to_path_buf());
    match result {
        Ok(summary) => {
            record.status = "ok".into();
            for a in &artifacts {
                record.add_artifact(out_dir, a)?;
            }
            record.write(out_dir)?;
            Ok(summary)
        }
        Err(e) => {
            // Persist the partial record marked failed, then propagate.
            record.status = format!("failed: {e}");
            for a in artifacts.iter().filter(|a| a.exists()) {
                let _ = record.add_artifact(out_dir, a);
            }
            let _ = record.write(out_dir);
            Err(e)
        }
    }
}
