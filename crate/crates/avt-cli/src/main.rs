mod demo;
mod format;
mod record;
mod util;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use avt_core::bounds::{
    theorem_check_mc, tstar_window, verify_contraction_mc, NoiseMode,
};
use avt_core::poison::{
    adversarial_train, evaluate, generate_synthetic_dataset, shortcut_attack, train_classifier,
    Classifier, ClassifierConfig, PgdConfig, SyntheticConfig,
};
use avt_core::score_model::{train_score_model, TrainConfig};
use avt_core::select::{match_timestep, select_by_psnr};
use avt_core::Tensor;
use clap::{Parser, Subcommand};
use serde_json::json;

use demo::DemoConfig;
use format::CheckpointHeader;
use util::{ScheduleArgs, ScoreArgs};

#[derive(Parser)]
#[command(name = "avt", version, about = "Diffusion-based data sanitization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect variance schedules.
    Schedule {
        #[command(subcommand)]
        cmd: ScheduleCmd,
    },
    /// Contraction bounds and Monte Carlo verifiers.
    Bound {
        #[command(subcommand)]
        cmd: BoundCmd,
    },
    /// Sanitization-horizon selection.
    Tstar {
        #[command(subcommand)]
        cmd: TstarCmd,
    },
    /// Availability attacks.
    Attack {
        #[command(subcommand)]
        cmd: AttackCmd,
    },
    /// Train an eps-prediction score model on a dataset tensor.
    TrainScore {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value = "128,128")]
        hidden: String,
        #[arg(long, default_value_t = 32)]
        time_embed_dim: usize,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the diffuse-then-denoise sanitizer over a dataset tensor.
    Sanitize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        t_star: usize,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long, default_value = "unit01")]
        space: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (0 = rayon default). Output is identical for any value.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Train the toy classifier on a labeled dataset.
    TrainClassifier {
        #[command(flatten)]
        args: ClassifierArgs,
    },
    /// PGD adversarial training.
    AdvTrain {
        #[command(flatten)]
        args: ClassifierArgs,
        #[arg(long, default_value_t = 10)]
        pgd_steps: usize,
        #[arg(long, default_value_t = 0.01)]
        pgd_step_size: f32,
        #[arg(long)]
        pgd_epsilon: f32,
    },
    /// End-to-end toy pipelines.
    Demo {
        #[command(subcommand)]
        cmd: DemoCmd,
    },
    /// Verify the artifact hashes of a run record.
    Selfcheck {
        #[arg(long)]
        record: PathBuf,
    },
    /// Emit a synthetic labeled dataset (train/test tensors plus mixture spec).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 256)]
        train_per_class: usize,
        #[arg(long, default_value_t = 128)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0.35)]
        separation: f64,
        #[arg(long, default_value_t = 0.04)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct ClassifierArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "64")]
    hidden: String,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum ScheduleCmd {
    /// Print t, beta_t, alpha_bar_t as CSV.
    Show {
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Print every k-th timestep.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

#[derive(Subcommand)]
enum BoundCmd {
    /// Evaluate the t* feasibility window.
    Window {
        #[arg(long)]
        delta_norm_sq: f64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        delta_cap: f64,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Monte Carlo verification of the per-step and cumulative contraction
    /// inequalities against a mixture oracle.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        t_star: usize,
        /// Perturbation vector, comma-separated.
        #[arg(long)]
        delta: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "independent")]
        noise: String,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Include every per-step check in the output.
        #[arg(long)]
        full: bool,
    },
    /// Monte Carlo check of the final 2(mu+1)Delta estimate.
    Theorem {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        delta: String,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
}

#[derive(Subcommand)]
enum TstarCmd {
    /// Match a timestep between two schedules by signal level.
    Match {
        #[arg(long)]
        t: usize,
        #[arg(long, default_value = "linear")]
        source: String,
        #[arg(long, default_value = "cosine")]
        target: String,
        #[arg(long, default_value_t = avt_core::schedule::DEFAULT_T)]
        steps: usize,
    },
    /// Pick t* by PSNR threshold over a timestep grid.
    Psnr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "25,50,100,200")]
        grid: String,
        #[arg(long, default_value_t = 22.0)]
        threshold: f64,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long, default_value = "unit01")]
        space: String,
        #[arg(long, default_value_t = 1.0)]
        max_value: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Class-wise shortcut perturbations at a fixed norm budget.
    Shortcut {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value = "linf")]
        norm: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DemoCmd {
    /// generate -> attack -> select t* -> sanitize -> train -> evaluate.
    E2e {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// "oracle" or "trained".
        #[arg(long)]
        score: Option<String>,
        /// Fixed t* instead of PSNR selection (0 = identity).
        #[arg(long)]
        t_star: Option<usize>,
        #[arg(long)]
        adv_train: bool,
        #[arg(long)]
        no_ablation: bool,
        /// JSON file overriding the full demo config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap());
}

fn train_classifier_cmd(
    args: &ClassifierArgs,
    pgd: Option<PgdConfig>,
) -> Result<(Classifier, f64)> {
    let train = format::read_dataset(&args.train)?;
    let test = format::read_dataset(&args.test)?;
    let cfg = ClassifierConfig {
        hidden: util::parse_usize_list(&args.hidden)?,
        epochs: args.epochs,
        milestones: vec![args.epochs / 2, args.epochs * 5 / 6],
        ..ClassifierConfig::default()
    };
    let model = match pgd {
        Some(p) => adversarial_train(&train, &test, &cfg, &p, args.seed),
        None => train_classifier(&train, &test, &cfg, args.seed),
    }
    .map_err(|e| anyhow::anyhow!("training: {e}"))?;
    let acc = evaluate(&model, &test).map_err(|e| anyhow::anyhow!("{e}"))?;
    if let Some(out) = &args.out {
        format::write_checkpoint(
            out,
            &CheckpointHeader {
                kind: "classifier".into(),
                layer_dims: model.dims().to_vec(),
                data_dim: None,
                time_embed_dim: None,
                schedule_hash: None,
                seed: args.seed,
            },
            model.params(),
        )?;
    }
    Ok((model, acc))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Schedule {
            cmd: ScheduleCmd::Show { schedule, stride },
        } => {
            let s = schedule.build()?;
            if stride == 0 {
                bail!("stride must be >= 1");
            }
            println!("t,beta,alpha_bar");
            for t in (1..=s.steps()).step_by(stride) {
                println!("{t},{:.10e},{:.10e}", s.beta(t).unwrap(), s.alpha_bar(t).unwrap());
            }
        }
        Command::Bound { cmd } => run_bound(cmd)?,
        Command::Tstar { cmd } => run_tstar(cmd)?,
        Command::Attack {
            cmd:
                AttackCmd::Shortcut {
                    data,
                    out,
                    epsilon,
                    norm,
                    seed,
                },
        } => {
            let clean = format::read_dataset(&data)?;
            let budget = format::budget_from_args(&norm, epsilon)?;
            let poisoned =
                shortcut_attack(&clean, budget, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
            format::write_dataset(
                &out,
                &poisoned.to_labeled(),
                Some(format::AttackMeta {
                    attack: poisoned.attack.into(),
                    norm,
                    epsilon,
                    seed,
                }),
            )?;
            print_json(&json!({
                "out": out,
                "max_perturbation_norm": poisoned.max_norm(),
            }));
        }
        Command::TrainScore {
            data,
            out,
            schedule,
            hidden,
            time_embed_dim,
            epochs,
            batch_size,
            lr,
            seed,
        } => {
            let s = schedule.build()?;
            let tensor = format::read_tensor(&data)?;
            let cfg = TrainConfig {
                hidden: util::parse_usize_list(&hidden)?,
                time_embed_dim,
                epochs,
                batch_size,
                lr,
                seed,
            };
            let (model, report) =
                train_score_model(&tensor, &s, &cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
            let mut dims = vec![model.data_dim() + model.time_embed_dim()];
            dims.extend_from_slice(model.hidden());
            dims.push(model.data_dim());
            format::write_checkpoint(
                &out,
                &CheckpointHeader {
                    kind: "score".into(),
                    layer_dims: dims,
                    data_dim: Some(model.data_dim()),
                    time_embed_dim: Some(model.time_embed_dim()),
                    schedule_hash: Some(format::schedule_hash(&s)),
                    seed,
                },
                model.params(),
            )?;
            print_json(&json!({
                "out": out,
                "final_loss": report.final_loss,
                "epoch_losses": report.epoch_losses,
            }));
        }
        Command::Sanitize {
            data,
            out,
            t_star,
            schedule,
            score,
            space,
            seed,
            threads,
        } => {
            let s = schedule.build()?;
            let sf = score.load(&s)?;
            let tensor = format::read_tensor(&data)?;
            let cleaned = util::sanitize_parallel(
                &tensor,
                t_star,
                &s,
                sf.as_ref(),
                seed,
                util::parse_space(&space)?,
                threads,
            )?;
            format::write_tensor(&out, &cleaned)?;
            // Carry labels over when the input has a sidecar.
            let sidecar = format::sidecar_path(&data);
            if sidecar.exists() {
                let meta: format::DatasetMeta =
                    serde_json::from_slice(&std::fs::read(&sidecar)?)?;
                let cleaned_meta = format::DatasetMeta {
                    attack: None,
                    ..meta
                };
                std::fs::write(
                    format::sidecar_path(&out),
                    serde_json::to_vec_pretty(&cleaned_meta)?,
                )?;
            }
            print_json(&json!({"out": out, "t_star": t_star}));
        }
        Command::TrainClassifier { args } => {
            let (model, acc) = train_classifier_cmd(&args, None)?;
            print_json(&json!({
                "final_acc": model.metrics.final_acc,
                "best_acc": model.metrics.best_acc,
                "clean_test_acc": acc,
            }));
        }
        Command::AdvTrain {
            args,
            pgd_steps,
            pgd_step_size,
            pgd_epsilon,
        } => {
            let pgd = PgdConfig {
                steps: pgd_steps,
                step_size: pgd_step_size,
                epsilon: pgd_epsilon,
            };
            let (model, acc) = train_classifier_cmd(&args, Some(pgd))?;
            print_json(&json!({
                "final_acc": model.metrics.final_acc,
                "best_acc": model.metrics.best_acc,
                "clean_test_acc": acc,
            }));
        }
        Command::Demo {
            cmd:
                DemoCmd::E2e {
                    out,
                    seed,
                    threads,
                    score,
                    t_star,
                    adv_train,
                    no_ablation,
                    config,
                },
        } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_slice(
                    &std::fs::read(&path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => DemoConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            if let Some(score) = score {
                cfg.score = score;
            }
            if t_star.is_some() {
                cfg.t_star_override = t_star;
            }
            cfg.adv_train = adv_train || cfg.adv_train;
            if no_ablation {
                cfg.ablation = false;
            }
            let summary = demo::run_demo_e2e(&cfg, &out)?;
            print_json(&json!({
                "t_star": summary.t_star,
                "clean_acc": summary.clean_acc,
                "poisoned_acc": summary.poisoned_acc,
                "sanitized_acc": summary.sanitized_acc,
                "ablation_acc": summary.ablation_acc,
                "adv_acc": summary.adv_acc,
                "record": summary.record_path,
            }));
        }
        Command::Selfcheck { record } => {
            let rec = record::verify_record(&record)?;
            print_json(&json!({
                "status": rec.status,
                "artifacts_verified": rec.artifacts.len(),
                "config_hash": rec.config_hash,
            }));
        }
        Command::GenData {
            out,
            classes,
            dim,
            train_per_class,
            test_per_class,
            separation,
            noise,
            seed,
        } => {
            std::fs::create_dir_all(&out)?;
            let synth = generate_synthetic_dataset(&SyntheticConfig {
                classes,
                train_per_class,
                test_per_class,
                dim,
                separation,
                noise,
                seed,
            })
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            format::write_dataset(&out.join("train.avt1"), &synth.train, None)?;
            format::write_dataset(&out.join("test.avt1"), &synth.test, None)?;
            format::write_spec(&out.join("spec.json"), &synth.spec)?;
            print_json(&json!({"out": out, "train": synth.train.len(), "test": synth.test.len()}));
        }
    }
    Ok(())
}

fn run_bound(cmd: BoundCmd) -> Result<()> {
    match cmd {
        BoundCmd::Window {
            delta_norm_sq,
            dim,
            mu,
            delta_cap,
            schedule,
        } => {
            let s = schedule.build()?;
            let w = tstar_window(delta_norm_sq, dim, mu, delta_cap, &s)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            print_json(&json!({
                "lower": w.lower,
                "upper": w.upper,
                "feasible": w.feasible,
                "admissible_t_min": w.admissible_ts.first(),
                "admissible_t_max": w.admissible_ts.last(),
                "admissible_count": w.admissible_ts.len(),
            }));
        }
        BoundCmd::Verify {
            spec,
            t_star,
            delta,
            n,
            seed,
            noise,
            schedule,
            full,
        } => {
            let s = schedule.build()?;
            let mix = format::read_spec(&spec)?;
            let delta = Tensor::from_vec(util::parse_f32_list(&delta)?);
            let mode = match noise.as_str() {
                "independent" => NoiseMode::Independent,
                "shared" => NoiseMode::Shared,
                other => bail!("unknown noise mode {other:?}"),
            };
            let r = verify_contraction_mc(&mix, &s, t_star, &delta, n, seed, mode)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let mut out = json!({
                "t_star": r.t_star,
                "n": r.n,
                "holds": r.holds,
                "certified_steps": r.steps.iter().filter(|st| st.certified).count(),
                "initial_sq_mean": r.initial_sq_mean,
                "final_sq_mean": r.final_sq_mean,
                "cumulative_bound": r.cumulative_bound,
                "product": r.product,
                "exp_bound": r.exp_bound,
            });
            if full {
                out["steps"] = r
                    .steps
                    .iter()
                    .map(|st| {
                        json!({
                            "t": st.t, "lhs_mean": st.lhs_mean, "lhs_se": st.lhs_se,
                            "rhs": st.rhs, "certified": st.certified, "holds": st.holds,
                        })
                    })
                    .collect();
            }
            print_json(&out);
        }
        BoundCmd::Theorem {
            spec,
            delta,
            mu,
            n,
            seed,
            schedule,
        } => {
            let s = schedule.build()?;
            let mix = format::read_spec(&spec)?;
            let delta = Tensor::from_vec(util::parse_f32_list(&delta)?);
            let r = theorem_check_mc(&mix, &s, &delta, mu, n, seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            print_json(&json!({
                "feasible": r.feasible,
                "holds": r.holds,
                "chosen_t_star": r.chosen_t_star,
                "delta_hat": r.delta_hat,
                "err_mean": r.err_mean,
                "bound": r.bound,
                "window_lower": r.window.lower,
                "window_upper": r.window.upper,
            }));
        }
    }
    Ok(())
}

fn run_tstar(cmd: TstarCmd) -> Result<()> {
    match cmd {
        TstarCmd::Match {
            t,
            source,
            target,
            steps,
        } => {
            let from = util::build_schedule(
                &source,
                steps,
                avt_core::schedule::DEFAULT_BETA_START,
                avt_core::schedule::DEFAULT_BETA_END,
                avt_core::schedule::DEFAULT_COSINE_OFFSET,
            )?;
            let to = util::build_schedule(
                &target,
                steps,
                avt_core::schedule::DEFAULT_BETA_START,
                avt_core::schedule::DEFAULT_BETA_END,
                avt_core::schedule::DEFAULT_COSINE_OFFSET,
            )?;
            let matched = match_timestep(&from, t, &to).map_err(|e| anyhow::anyhow!("{e}"))?;
            print_json(&json!({
                "source_t": t,
                "source_alpha_bar": from.alpha_bar(t).unwrap(),
                "matched_t": matched,
                "matched_alpha_bar": to.alpha_bar(matched).unwrap(),
            }));
        }
        TstarCmd::Psnr {
            data,
            grid,
            threshold,
            schedule,
            score,
            space,
            max_value,
            seed,
        } => {
            let s = schedule.build()?;
            let sf = score.load(&s)?;
            let tensor = format::read_tensor(&data)?;
            let curve = select_by_psnr(
                &tensor,
                &util::parse_usize_list(&grid)?,
                threshold,
                &s,
                sf.as_ref(),
                seed,
                util::parse_space(&space)?,
                max_value,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            print_json(&json!({
                "chosen_t": curve.chosen_t,
                "threshold": curve.threshold,
                "points": curve.points.iter()
                    .map(|p| json!({"t": p.t, "mean_psnr": p.mean_psnr}))
                    .collect::<Vec<_>>(),
            }));
        }
    }
    Ok(())
}
