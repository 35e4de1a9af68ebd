//! The `cincgan` command line: degradation, training, evaluation and
//! ablation driven by one config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cincgan::config::{ResumeMode, RunConfig};
use cincgan::evaluation::{
    emit_report, evaluate, evaluate_lr_cleaning, run_ablation, write_panels, EvalReport, Method, Pipeline,
};
use cincgan::degradation::{Manifest, MANIFEST_FILE};
use cincgan::imaging::io::write_atomic;
use cincgan::networks::{load_params, save_params};
use cincgan::training::{
    load_checkpoint, pretrain_sr, save_checkpoint, train_phase1, train_phase2, NetId, Networks, RunHooks, RunLog,
    Structure, TrainState,
};
use cincgan::workflow::{load_split, load_val_pairs, prepare_data};
use cincgan::{Error, Result};

#[derive(Parser)]
#[command(name = "cincgan", version, about = "Unsupervised super-resolution with nested cycle GANs")]
struct Cli {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set split.batch_size=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Validate the configuration, print the plan and exit without writing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the degraded LR corpora (and the procedural HR corpus if enabled).
    Degrade,
    /// Supervised SR pretraining on bicubic pairs.
    PretrainSr,
    /// Phase 1: train the LR cleaning cycle.
    TrainLr,
    /// Phase 2: joint training from the phase-1 checkpoint and pretrained SR.
    TrainJoint,
    /// Score a method on the validation set.
    Evaluate {
        #[arg(long, value_enum, default_value_t = MethodArg::Model)]
        method: MethodArg,
        /// Training checkpoint to evaluate (default: the run's phase-2 checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the ablation structures under one budget.
    Ablate {
        /// Comma-separated subset of full, structure1, structure2, structure3.
        #[arg(long, value_delimiter = ',', default_value = "full,structure1,structure2,structure3")]
        structures: Vec<String>,
    },
    /// Print a summary of a checkpoint or parameter file.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Model,
    Bicubic,
}

struct Run {
    cfg: RunConfig,
    dry_run: bool,
}

impl Run {
    fn dir(&self) -> &Path {
        &self.cfg.paths.run_dir
    }
    fn sr_path(&self) -> PathBuf {
        self.dir().join("sr_pretrained.bin")
    }
    fn phase1_path(&self) -> PathBuf {
        self.dir().join("phase1.ckpt")
    }
    fn phase2_path(&self) -> PathBuf {
        self.dir().join("phase2.ckpt")
    }
    fn log(&self) -> Result<RunLog> {
        RunLog::append(&self.dir().join("log.jsonl"))
    }

    fn plan(&self, lines: &[String]) -> bool {
        if self.dry_run {
            println!("# resolved configuration (fingerprint {})", self.cfg.fingerprint());
            print!("{}", self.cfg.to_toml());
            println!("# plan");
            for l in lines {
                println!("- {l}");
            }
        }
        self.dry_run
    }

    fn degrade(&self) -> Result<()> {
        let c = &self.cfg;
        let mut plan = Vec::new();
        if c.corpus.procedural {
            plan.push(format!(
                "synthesise {} training and {} validation images into {} and {}",
                c.corpus.train_count,
                c.corpus.val_count,
                c.train_hr_dir().display(),
                c.val_hr_dir().display()
            ));
        }
        plan.push(format!("degrade {} -> {}", c.train_hr_dir().display(), c.train_lr_dir().display()));
        plan.push(format!("degrade {} -> {}", c.val_hr_dir().display(), c.val_lr_dir().display()));
        if self.plan(&plan) {
            return Ok(());
        }
        let (train, val) = prepare_data(c)?;
        info!("degraded {} training and {} validation images", train.records.len(), val.records.len());
        println!("train: {} images -> {}", train.records.len(), c.train_lr_dir().display());
        println!("val: {} images -> {}", val.records.len(), c.val_lr_dir().display());
        Ok(())
    }

    fn pretrain_sr(&self) -> Result<()> {
        let c = &self.cfg;
        let plan = [format!(
            "pretrain SR for {} steps on bicubic pairs from HR indices {}..={}, writing {}",
            c.steps.pretrain_sr,
            c.split.hr_indices[0],
            c.split.hr_indices[1],
            self.sr_path().display()
        )];
        if self.plan(&plan) {
            return Ok(());
        }
        let split = load_split(c)?;
        let nets = Networks::from_config(c)?;
        let mut log = self.log()?;
        let mut hooks = RunHooks {
            log: Some(&mut log),
            ..Default::default()
        };
        let (params, losses) = pretrain_sr(c, &nets, &split, c.steps.pretrain_sr, &mut hooks)?;
        save_params(&self.sr_path(), nets.get(NetId::Sr), &params)?;
        if let Some(l) = losses.last() {
            println!("SR pretraining: {} steps, final L1 {l:.5}", losses.len());
        }
        Ok(())
    }

    fn train_lr(&self) -> Result<()> {
        let c = &self.cfg;
        let path = self.phase1_path();
        let resume = c.resume == ResumeMode::Auto && path.exists();
        let plan = [format!(
            "{} phase 1 to {} iterations, checkpointing to {}",
            if resume { "resume" } else { "run" },
            c.steps.phase1,
            path.display()
        )];
        if self.plan(&plan) {
            return Ok(());
        }
        let nets = Networks::from_config(c)?;
        let mut state = if resume {
            let (state, saved) = load_checkpoint(&path)?;
            check_resume(&state, 1, &saved, c)?;
            info!("resuming phase 1 at iteration {}", state.iteration);
            state
        } else {
            TrainState::new(c, &nets)
        };
        let remaining = c.steps.phase1.saturating_sub(state.iteration);
        let split = load_split(c)?;
        let mut log = self.log()?;
        let mut hooks = RunHooks {
            log: Some(&mut log),
            checkpoint: Some(&path),
            config: Some(c),
        };
        train_phase1(&mut state, c, &nets, &split, remaining, &mut hooks)?;
        save_checkpoint(&state, c, &path)?;
        print_last(&state);
        Ok(())
    }

    fn train_joint(&self) -> Result<()> {
        let c = &self.cfg;
        let p2 = self.phase2_path();
        let resume = c.resume == ResumeMode::Auto && p2.exists();
        let plan = [if resume {
            format!("resume phase 2 from {} to {} iterations", p2.display(), c.steps.phase2)
        } else {
            format!(
                "start phase 2 from {} and {}, run {} iterations, checkpointing to {}",
                self.phase1_path().display(),
                self.sr_path().display(),
                c.steps.phase2,
                p2.display()
            )
        }];
        if self.plan(&plan) {
            return Ok(());
        }
        let nets = Networks::from_config(c)?;
        let mut state = if resume {
            let (state, saved) = load_checkpoint(&p2)?;
            check_resume(&state, 2, &saved, c)?;
            info!("resuming phase 2 at iteration {}", state.iteration);
            state
        } else {
            self.joint_start(&nets, Structure::Full)?
        };
        let remaining = c.steps.phase2.saturating_sub(state.iteration);
        let split = load_split(c)?;
        let mut log = self.log()?;
        let mut hooks = RunHooks {
            log: Some(&mut log),
            checkpoint: Some(&p2),
            config: Some(c),
        };
        train_phase2(&mut state, c, &nets, &split, remaining, &mut hooks)?;
        save_checkpoint(&state, c, &p2)?;
        print_last(&state);
        Ok(())
    }

    /// The finished phase-1 state and the pretrained SR weights.
    fn phase1_inputs(&self, nets: &Networks) -> Result<(TrainState, cincgan::networks::NetworkParams<f32>)> {
        let p1 = self.phase1_path();
        if !p1.exists() {
            return Err(Error::InvalidArgument(format!(
                "{} not found; run train-lr first",
                p1.display()
            )));
        }
        let sr = self.sr_path();
        if !sr.exists() {
            return Err(Error::InvalidArgument(format!(
                "{} not found; run pretrain-sr first",
                sr.display()
            )));
        }
        let (state, _) = load_checkpoint(&p1)?;
        if state.phase != 1 {
            return Err(Error::Checkpoint(format!("{} is not a phase-1 checkpoint", p1.display())));
        }
        if state.iteration < self.cfg.steps.phase1 {
            warn!(
                "phase-1 checkpoint has {} of {} iterations; continuing from it anyway",
                state.iteration, self.cfg.steps.phase1
            );
        }
        let (net, params) = load_params::<f32>(&sr)?;
        if net.spec() != nets.get(NetId::Sr).spec() {
            return Err(Error::Checkpoint(format!(
                "{} holds a different SR architecture than the configuration",
                sr.display()
            )));
        }
        Ok((state, params))
    }

    fn joint_start(&self, nets: &Networks, structure: Structure) -> Result<TrainState> {
        let (mut state, sr) = self.phase1_inputs(nets)?;
        state.begin_phase2(&self.cfg, nets, sr, structure)?;
        Ok(state)
    }

    fn evaluate(&self, method: MethodArg, checkpoint: Option<PathBuf>) -> Result<()> {
        let c = &self.cfg;
        let scale = c.degradation.scale;
        let out = self.dir().join("eval").join(match method {
            MethodArg::Model => "model",
            MethodArg::Bicubic => "bicubic",
        });
        let ckpt = checkpoint.unwrap_or_else(|| self.phase2_path());
        let plan = [match method {
            MethodArg::Model => format!("evaluate {} and the bicubic baseline into {}", ckpt.display(), out.display()),
            MethodArg::Bicubic => format!("evaluate the bicubic baseline into {}", out.display()),
        }];
        if self.plan(&plan) {
            return Ok(());
        }
        let pairs = load_val_pairs(c)?;
        let fp = c.fingerprint();
        let border = c.eval.border_crop;
        let bicubic = Method::Bicubic { scale };
        let baseline = evaluate(&bicubic, "bicubic", &pairs, border, &fp)?;
        let reports = match method {
            MethodArg::Bicubic => {
                write_panels(&bicubic, &pairs, scale, &out.join("panels"), c.eval.panels)?;
                vec![baseline]
            }
            MethodArg::Model => {
                let (state, saved) = load_checkpoint(&ckpt)?;
                if state.phase != 2 {
                    return Err(Error::Checkpoint(format!(
                        "{} is a phase-{} checkpoint; evaluation needs a joint-training state",
                        ckpt.display(),
                        state.phase
                    )));
                }
                let nets = Networks::from_config(&saved)?;
                let pipeline = Pipeline::from_state(&nets, &state)?;
                let model = Method::Model {
                    pipeline,
                    tile: c.eval.tile,
                    overlap: c.eval.overlap,
                };
                let report = evaluate(&model, state.structure.label(), &pairs, border, &fp)?;
                write_panels(&model, &pairs, scale, &out.join("panels"), c.eval.panels)?;
                if let Some(g1) = pipeline.g1 {
                    let manifest = Manifest::load(&c.val_lr_dir().join(MANIFEST_FILE))?;
                    let lb = c.eval.lr_border_crop;
                    let lr_reports = vec![
                        evaluate_lr_cleaning(None, "input", &pairs, Some(&manifest), scale, lb, &fp)?,
                        evaluate_lr_cleaning(Some(g1), "g1", &pairs, Some(&manifest), scale, lb, &fp)?,
                    ];
                    emit_report(&lr_reports, Some(c), &out.join("lr"))?;
                    print_table("LR cleaning", &lr_reports);
                }
                vec![report, baseline]
            }
        };
        emit_report(&reports, Some(c), &out)?;
        print_table("super-resolution", &reports);
        println!("report: {}", out.join("report.json").display());
        Ok(())
    }

    fn ablate(&self, names: &[String]) -> Result<()> {
        let c = &self.cfg;
        let structures = names
            .iter()
            .map(|s| Structure::parse(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        let out = self.dir().join("ablation");
        let plan = [format!(
            "train {} for {} joint iterations each from {} and {}, reporting into {}",
            names.join(", "),
            c.steps.ablation,
            self.phase1_path().display(),
            self.sr_path().display(),
            out.display()
        )];
        if self.plan(&plan) {
            return Ok(());
        }
        let nets = Networks::from_config(c)?;
        let (phase1, sr) = self.phase1_inputs(&nets)?;
        let split = load_split(c)?;
        let pairs = load_val_pairs(c)?;
        let mut log = self.log()?;
        let mut reports: Vec<EvalReport> = Vec::new();
        let mut digests = Vec::new();
        for s in structures {
            info!("ablation: training {} for {} iterations", s.label(), c.steps.ablation);
            log.event("ablation-start", serde_json::json!({ "structure": s.label() }))?;
            let mut hooks = RunHooks {
                log: Some(&mut log),
                ..Default::default()
            };
            let run = run_ablation(s, c, &nets, &split, &phase1, &sr, c.steps.ablation, &pairs, &mut hooks)?;
            save_checkpoint(&run.state, c, &out.join(format!("{}.ckpt", s.label())))?;
            digests.push(hex(&run.state.data_digest));
            reports.push(run.report);
        }
        if digests.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument("ablation runs saw different data streams".into()));
        }
        let bicubic = evaluate(
            &Method::Bicubic { scale: c.degradation.scale },
            "bicubic",
            &pairs,
            c.eval.border_crop,
            &c.fingerprint(),
        )?;
        let ordering = ordering_summary(&reports);
        reports.push(bicubic);
        emit_report(&reports, Some(c), &out)?;
        let mut summary = serde_json::json!({ "data_digest": digests.first() });
        if let Some(o) = ordering {
            summary["ordering"] = o;
        }
        write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
        print_table("ablation", &reports);
        if let Some(o) = summary.get("ordering") {
            println!("ordering: {o}");
        }
        println!("report: {}", out.join("report.json").display());
        Ok(())
    }
}

/// Compares the full model with the best reduced structure, when both ran.
fn ordering_summary(reports: &[EvalReport]) -> Option<serde_json::Value> {
    let full = reports.iter().find(|r| r.method == "full")?;
    let best = reports
        .iter()
        .filter(|r| r.method != "full")
        .max_by(|a, b| a.mean_psnr.total_cmp(&b.mean_psnr))?;
    let margin = full.mean_psnr - best.mean_psnr;
    Some(serde_json::json!({
        "full_psnr": full.mean_psnr,
        "best_reduced": best.method,
        "best_reduced_psnr": best.mean_psnr,
        "margin_db": margin,
        "tolerance_db": 0.1,
        "holds": margin >= -0.1,
    }))
}

fn check_resume(state: &TrainState, phase: u8, saved: &RunConfig, cfg: &RunConfig) -> Result<()> {
    if state.phase != phase {
        return Err(Error::Checkpoint(format!(
            "expected a phase-{phase} checkpoint, found phase {}",
            state.phase
        )));
    }
    if saved.fingerprint() != cfg.fingerprint() {
        warn!(
            "resuming under config {} although the checkpoint was written by {}",
            cfg.fingerprint(),
            saved.fingerprint()
        );
    }
    Ok(())
}

fn print_last(state: &TrainState) {
    match state.history.back() {
        Some(rec) => println!(
            "phase {}: {} iterations; last record {}",
            state.phase,
            state.iteration,
            serde_json::to_string(rec).unwrap_or_default()
        ),
        None => println!("phase {}: {} iterations", state.phase, state.iteration),
    }
}

fn print_table(title: &str, reports: &[EvalReport]) {
    println!("{title}:");
    for r in reports {
        println!("  {:<12} PSNR {:>8.4} dB  SSIM {:.4}", r.method, r.mean_psnr, r.mean_ssim);
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn inspect(path: &Path) -> Result<()> {
    let (meta, _) = cincgan::archive::load::<f32>(path)?;
    let summary = match meta["content"].as_str() {
        Some("train-state") => {
            let (state, cfg) = load_checkpoint(path)?;
            let nets = Networks::from_config(&cfg)?;
            let networks: serde_json::Map<String, serde_json::Value> = state
                .census()
                .into_iter()
                .map(|id| {
                    let slot = state.slot(id).expect("census lists instantiated networks");
                    let v = serde_json::json!({
                        "kind": id.kind(),
                        "parameters": nets.get(id).param_count(),
                        "adam_step": slot.adam.step,
                        "fingerprint": hex(&slot.params.fingerprint()),
                    });
                    (id.name().to_string(), v)
                })
                .collect();
            serde_json::json!({
                "content": "train-state",
                "checkpoint_version": meta["checkpoint_version"],
                "phase": state.phase,
                "iteration": state.iteration,
                "structure": state.structure,
                "config_fingerprint": cfg.fingerprint(),
                "data_digest": hex(&state.data_digest),
                "networks": networks,
                "last_record": state.history.back(),
            })
        }
        Some("network") => {
            let (net, params) = load_params::<f32>(path)?;
            serde_json::json!({
                "content": "network",
                "spec": net.spec(),
                "parameters": net.param_count(),
                "fingerprint": hex(&params.fingerprint()),
            })
        }
        _ => return Err(Error::Checkpoint(format!("{}: unrecognised archive content", path.display()))),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Command::InspectCheckpoint { path } = &cli.command {
        return inspect(path);
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let run = Run {
        cfg,
        dry_run: cli.dry_run,
    };
    match cli.command {
        Command::Degrade => run.degrade(),
        Command::PretrainSr => run.pretrain_sr(),
        Command::TrainLr => run.train_lr(),
        Command::TrainJoint => run.train_joint(),
        Command::Evaluate { method, checkpoint } => run.evaluate(method, checkpoint),
        Command::Ablate { structures } => run.ablate(&structures),
        Command::InspectCheckpoint { .. } => unreachable!("handled above"),
    }
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code. Errors print one `error: <kind>: <message>`
/// line to stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    // A second initialisation (several runs in one process) keeps the first logger.
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
